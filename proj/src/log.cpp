#include "wplus/log.hpp"

#include <iostream>
#include <mutex>

namespace wplus::log {
namespace {

std::mutex mu;
Level threshold = Level::Info;

void to_stderr(Level level, const std::string& m) {
  static const char* tags[] = {"debug", "info", "warn", "error"};
  std::cerr << "[" << tags[static_cast<int>(level)] << "] " << m << '\n';
}

Sink& sink() {
  static Sink s = to_stderr;
  return s;
}

}  // namespace

Sink set_sink(Sink s) {
  std::lock_guard lock(mu);
  Sink old = std::move(sink());
  sink() = s ? std::move(s) : Sink(to_stderr);
  return old;
}

void set_level(Level level) {
  std::lock_guard lock(mu);
  threshold = level;
}

void write(Level level, const std::string& message) {
  std::lock_guard lock(mu);
  if (level < threshold) return;
  sink()(level, message);
}

}  // namespace wplus::log
