#pragma once

#include <functional>
#include <string>

namespace wplus::log {

enum class Level { Debug, Info, Warn, Error };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the sink (default: stderr). Returns the previous one.
Sink set_sink(Sink sink);
void set_level(Level level);

void write(Level level, const std::string& message);
inline void debug(const std::string& m) { write(Level::Debug, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void warn(const std::string& m) { write(Level::Warn, m); }
inline void error(const std::string& m) { write(Level::Error, m); }

}  // namespace wplus::log
