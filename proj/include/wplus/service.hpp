#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "wplus/editing.hpp"
#include "wplus/encoder.hpp"
#include "wplus/generator.hpp"

namespace wplus {

struct ServiceConfig {
  std::chrono::seconds idle_timeout{30 * 60};
  int worker_budget = 4;
  /// Identical uploads within a session map to the same latent id.
  bool deterministic = true;
};

/// Result of one API call: JSON body, or raw bytes when content_type is not JSON.
struct ApiResponse {
  int status = 200;
  nlohmann::json body;
  std::string content_type = "application/json";
  std::string bytes;
};

/// Session store and request logic behind the HTTP facade. Thread-safe.
class EditingService {
 public:
  using Clock = std::chrono::steady_clock;

  EditingService(GeneratorHandle g, std::vector<std::shared_ptr<const Encoder>> pipeline,
                 std::vector<SemanticDirection> directions, ServiceConfig cfg = {});

  ApiResponse create_session();
  /// `png` is the uploaded file content.
  ApiResponse invert(const std::string& sid, const std::string& png, int stages, bool inline_preview = false);
  /// {latent_id, op: direction|interpolate|mix, params}
  ApiResponse edit(const std::string& sid, const nlohmann::json& request, bool inline_preview = false);
  ApiResponse directions() const;
  ApiResponse preview(const std::string& preview_id);
  /// Stored latent as JSON values plus its preview reference.
  ApiResponse latent(const std::string& sid, const std::string& latent_id);

  /// Drops sessions idle past the timeout; returns how many were removed.
  std::size_t expire_idle();
  std::size_t session_count() const;
  /// Test hook: replaces the time source.
  void set_clock(std::function<Clock::time_point()> now);

 private:
  struct StoredLatent {
    std::shared_ptr<const LatentCode> code;
    std::string preview_id;
  };
  struct Session {
    std::mutex mu;
    std::map<std::string, StoredLatent> latents;
    std::map<std::string, std::string> upload_index;  // hash|stages -> latent id
    Clock::time_point created;
    Clock::time_point last_access;
  };

  std::shared_ptr<Session> find_session(const std::string& sid);
  std::string store(Session& s, const std::string& sid, LatentCode code, nlohmann::json& out, bool inline_preview);
  std::string fresh_id(const char* prefix);

  GeneratorHandle g_;
  std::vector<std::shared_ptr<const Encoder>> pipeline_;
  std::map<std::string, SemanticDirection> directions_;
  ServiceConfig cfg_;
  std::function<Clock::time_point()> now_;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::pair<std::string, std::string>> previews_;  // id -> (session, png)
  std::mt19937_64 id_rng_;
};

/// HTTP+JSON server over an EditingService.
class HttpServer {
 public:
  explicit HttpServer(EditingService& service, int worker_budget = 4);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free one) and serves on a background thread. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wplus
