#include "wplus/service.hpp"

#include <httplib.h>

#include <cstdio>
#include <functional>

#include "wplus/error.hpp"
#include "wplus/image_io.hpp"
#include "wplus/log.hpp"
#include "wplus/trainer.hpp"

namespace wplus {
namespace {

ApiResponse fail(int status, const std::string& code, const std::string& message) {
  ApiResponse r;
  r.status = status;
  r.body = {{"code", code}, {"message", message}};
  return r;
}

std::string preview_url(const std::string& id) { return "/api/previews/" + id + ".png"; }

}  // namespace

EditingService::EditingService(GeneratorHandle g, std::vector<std::shared_ptr<const Encoder>> pipeline,
                               std::vector<SemanticDirection> directions, ServiceConfig cfg)
    : g_(std::move(g)), pipeline_(std::move(pipeline)), cfg_(cfg), now_([] { return Clock::now(); }) {
  if (!g_.valid()) throw ValidationError("service needs a generator");
  for (auto& d : directions) {
    d.validate();
    if (d.dim != g_.dim()) throw ValidationError("direction '" + d.name + "' does not match the generator's dim");
    directions_.emplace(d.name, std::move(d));
  }
  id_rng_.seed(std::random_device{}());
}

void EditingService::set_clock(std::function<Clock::time_point()> now) {
  std::lock_guard lock(mu_);
  now_ = std::move(now);
}

std::string EditingService::fresh_id(const char* prefix) {
  // caller holds mu_
  char buf[40];
  std::snprintf(buf, sizeof buf, "%s%016llx", prefix, static_cast<unsigned long long>(id_rng_()));
  return buf;
}

ApiResponse EditingService::create_session() {
  std::lock_guard lock(mu_);
  auto s = std::make_shared<Session>();
  s->created = s->last_access = now_();
  std::string sid;
  do sid = fresh_id("s");
  while (sessions_.count(sid));
  sessions_[sid] = s;
  ApiResponse r;
  r.status = 201;
  r.body = {{"session_id", sid}, {"idle_timeout_seconds", cfg_.idle_timeout.count()}};
  return r;
}

std::size_t EditingService::expire_idle() {
  std::lock_guard lock(mu_);
  const auto now = now_();
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_access > cfg_.idle_timeout) {
      for (auto p = previews_.begin(); p != previews_.end();)
        p = p->second.first == it->first ? previews_.erase(p) : std::next(p);
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::size_t EditingService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::shared_ptr<EditingService::Session> EditingService::find_session(const std::string& sid) {
  expire_idle();
  std::lock_guard lock(mu_);
  auto it = sessions_.find(sid);
  if (it == sessions_.end()) return nullptr;
  it->second->last_access = now_();
  return it->second;
}

std::string EditingService::store(Session& s, const std::string& sid, LatentCode code, nlohmann::json& out,
                                  bool inline_preview) {
  // caller holds s.mu
  const ImageTensor img = synthesize(g_, code);
  std::string png;
  {
    const auto bytes = encode_png(to_rgb8(img));
    png.assign(bytes.begin(), bytes.end());
  }
  std::string lid, pid;
  {
    std::lock_guard lock(mu_);
    do lid = fresh_id("l");
    while (s.latents.count(lid));
    do pid = fresh_id("p");
    while (previews_.count(pid));
    previews_[pid] = {sid, png};
  }
  s.latents[lid] = {std::make_shared<const LatentCode>(std::move(code)), pid};
  out["latent_id"] = lid;
  out["preview"] = preview_url(pid);
  if (inline_preview) out["preview_base64"] = httplib::detail::base64_encode(png);
  return lid;
}

ApiResponse EditingService::invert(const std::string& sid, const std::string& png, int stages, bool inline_preview) {
  auto s = find_session(sid);
  if (!s) return fail(404, "session_not_found", "unknown or expired session " + sid);
  if (pipeline_.empty()) return fail(503, "pipeline_unavailable", "no inversion pipeline is loaded");
  if (stages < 1 || stages > static_cast<int>(pipeline_.size()))
    return fail(400, "bad_stages",
                "stages must be in [1, " + std::to_string(pipeline_.size()) + "], got " + std::to_string(stages));
  ImageTensor img;
  try {
    img = from_rgb8(decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size())));
  } catch (const Error& e) {
    return fail(400, "bad_image", std::string("image could not be decoded: ") + e.what());
  }
  std::vector<const InversionStage*> raw;
  for (const auto& e : pipeline_) raw.push_back(e.get());
  const std::string key = std::to_string(std::hash<std::string>{}(png)) + "|" + std::to_string(stages);

  ApiResponse r;
  r.body = {{"session_id", sid}, {"stages", stages}};
  if (cfg_.deterministic) {
    std::lock_guard lock(s->mu);
    auto it = s->upload_index.find(key);
    if (it != s->upload_index.end()) {
      const auto& st = s->latents.at(it->second);
      r.body["latent_id"] = it->second;
      r.body["preview"] = preview_url(st.preview_id);
      if (inline_preview) {
        std::lock_guard glock(mu_);
        r.body["preview_base64"] = httplib::detail::base64_encode(previews_.at(st.preview_id).second);
      }
      return r;
    }
  }
  LatentCode w;
  try {
    w = wplus::invert(raw, g_, fit_to(img, pipeline_.front()->input_resolution()), stages).latent;
  } catch (const ValidationError& e) {
    return fail(400, "invalid_input", e.what());
  }
  std::lock_guard lock(s->mu);
  const std::string lid = store(*s, sid, std::move(w), r.body, inline_preview);
  if (cfg_.deterministic) s->upload_index[key] = lid;
  return r;
}

ApiResponse EditingService::edit(const std::string& sid, const nlohmann::json& req, bool inline_preview) {
  auto s = find_session(sid);
  if (!s) return fail(404, "session_not_found", "unknown or expired session " + sid);
  if (!req.is_object() || !req.contains("latent_id") || !req.contains("op"))
    return fail(400, "bad_request", "edit needs latent_id and op");
  const nlohmann::json params = req.value("params", nlohmann::json::object());
  std::lock_guard lock(s->mu);
  auto lookup = [&](const std::string& id) -> std::shared_ptr<const LatentCode> {
    auto it = s->latents.find(id);
    return it == s->latents.end() ? nullptr : it->second.code;
  };
  try {
    const std::string lid = req.at("latent_id").get<std::string>();
    const std::string op = req.at("op").get<std::string>();
    const auto base = lookup(lid);
    if (!base) return fail(404, "latent_not_found", "no latent " + lid + " in this session");
    LatentCode out;
    if (op == "direction") {
      const std::string name = params.at("direction").get<std::string>();
      auto d = directions_.find(name);
      if (d == directions_.end()) return fail(400, "unknown_direction", "no direction named '" + name + "'");
      out = manipulate(*base, d->second, params.value("alpha", 0.0));
    } else if (op == "interpolate") {
      const std::string other = params.at("other_latent_id").get<std::string>();
      const auto b = lookup(other);
      if (!b) return fail(404, "latent_not_found", "no latent " + other + " in this session");
      out = interpolate(*base, *b, params.at("lambda").get<double>());
    } else if (op == "mix") {
      const std::string other = params.at("style_latent_id").get<std::string>();
      const auto st = lookup(other);
      if (!st) return fail(404, "latent_not_found", "no latent " + other + " in this session");
      std::optional<int> keep;
      if (params.contains("keep")) keep = params.at("keep").get<int>();
      out = style_mix(*base, *st, keep);
    } else {
      return fail(400, "unknown_op", "op must be direction, interpolate or mix");
    }
    ApiResponse r;
    r.body = {{"session_id", sid}, {"source_latent_id", lid}, {"op", op}};
    store(*s, sid, std::move(out), r.body, inline_preview);
    return r;
  } catch (const nlohmann::json::exception& e) {
    return fail(400, "bad_request", std::string("malformed edit parameters: ") + e.what());
  } catch (const ValidationError& e) {
    return fail(400, "invalid_edit", e.what());
  }
}

ApiResponse EditingService::directions() const {
  ApiResponse r;
  r.body = nlohmann::json::array();
  for (const auto& [name, d] : directions_)
    r.body.push_back({{"name", name}, {"alpha_range", {d.alpha_range.first, d.alpha_range.second}}});
  return r;
}

ApiResponse EditingService::preview(const std::string& preview_id) {
  expire_idle();
  std::lock_guard lock(mu_);
  auto it = previews_.find(preview_id);
  if (it == previews_.end()) return fail(404, "preview_not_found", "no preview " + preview_id);
  ApiResponse r;
  r.content_type = "image/png";
  r.bytes = it->second.second;
  return r;
}

ApiResponse EditingService::latent(const std::string& sid, const std::string& latent_id) {
  auto s = find_session(sid);
  if (!s) return fail(404, "session_not_found", "unknown or expired session " + sid);
  std::lock_guard lock(s->mu);
  auto it = s->latents.find(latent_id);
  if (it == s->latents.end()) return fail(404, "latent_not_found", "no latent " + latent_id + " in this session");
  const LatentCode& w = *it->second.code;
  ApiResponse r;
  r.body = {{"latent_id", latent_id},
            {"n_codes", w.n_codes()},
            {"dim", w.dim()},
            {"values", std::vector<float>(w.data(), w.data() + w.size())},
            {"preview", preview_url(it->second.preview_id)}};
  return r;
}

struct HttpServer::Impl {
  EditingService& svc;
  httplib::Server server;
  std::thread thread;

  Impl(EditingService& s, int workers) : svc(s) {
    const int n = std::max(1, workers);
    server.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      if (r.content_type == "application/json") {
        res.set_content(r.body.dump(), "application/json");
      } else {
        res.set_content(r.bytes, r.content_type);
      }
    };
    auto inline_flag = [](const httplib::Request& req) {
      return req.has_param("inline") && req.get_param_value("inline") != "0" && req.get_param_value("inline") != "false";
    };
    server.Post("/api/sessions", [=, this](const httplib::Request&, httplib::Response& res) {
      reply(res, svc.create_session());
    });
    server.Post(R"(/api/sessions/([^/]+)/invert)", [=, this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("image")) return reply(res, fail(400, "bad_request", "multipart field 'image' is required"));
      int stages = 1;
      if (req.has_file("stages")) {
        try {
          stages = std::stoi(req.get_file_value("stages").content);
        } catch (const std::exception&) {
          return reply(res, fail(400, "bad_stages", "stages must be an integer"));
        }
      } else if (req.has_param("stages")) {
        try {
          stages = std::stoi(req.get_param_value("stages"));
        } catch (const std::exception&) {
          return reply(res, fail(400, "bad_stages", "stages must be an integer"));
        }
      }
      reply(res, svc.invert(req.matches[1], req.get_file_value("image").content, stages, inline_flag(req)));
    });
    server.Post(R"(/api/sessions/([^/]+)/edit)", [=, this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        return reply(res, fail(400, "bad_request", "body must be JSON"));
      }
      reply(res, svc.edit(req.matches[1], body, inline_flag(req)));
    });
    server.Get(R"(/api/sessions/([^/]+)/latents/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
      reply(res, svc.latent(req.matches[1], req.matches[2]));
    });
    server.Get("/api/directions", [=, this](const httplib::Request&, httplib::Response& res) {
      reply(res, svc.directions());
    });
    server.Get(R"(/api/previews/([^/]+)\.png)", [=, this](const httplib::Request& req, httplib::Response& res) {
      reply(res, svc.preview(req.matches[1]));
    });
    server.set_exception_handler([=](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      log::error("request failed: " + what);
      reply(res, fail(500, "internal", what));
    });
    server.set_error_handler([=](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, fail(res.status, "not_found", "no such endpoint"));
    });
  }
};

HttpServer::HttpServer(EditingService& service, int worker_budget)
    : impl_(std::make_unique<Impl>(service, worker_budget)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError("cannot serve on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace wplus
