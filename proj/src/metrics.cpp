#include "wplus/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"
#include "wplus/log.hpp"
#include "wplus/optim.hpp"

namespace wplus {

double psnr(const ImageTensor& x, const ImageTensor& y) {
  if (!x.same_shape(y)) throw ValidationError("psnr: images differ in shape");
  const double mse = (x.values().cast<double>() - y.values().cast<double>()).square().mean();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

namespace {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// valid-mode separable filtering
Plane filter_valid(const Plane& p, const Eigen::ArrayXd& k) {
  const int n = static_cast<int>(k.size());
  const int h = static_cast<int>(p.rows()), w = static_cast<int>(p.cols());
  Plane rows(h, w - n + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + n <= w; ++x) rows(y, x) = (p.row(y).segment(x, n).transpose() * k).sum();
  Plane out(h - n + 1, w - n + 1);
  for (int x = 0; x < rows.cols(); ++x)
    for (int y = 0; y + n <= h; ++y) out(y, x) = (rows.col(x).segment(y, n) * k).sum();
  return out;
}

}  // namespace

double ssim(const ImageTensor& x, const ImageTensor& y, int window, double sigma) {
  if (!x.same_shape(y)) throw ValidationError("ssim: images differ in shape");
  if (window < 1 || window > x.height() || window > x.width())
    throw ValidationError("ssim: window " + std::to_string(window) + " exceeds the image side");
  auto lum = [](const ImageTensor& img) {
    Eigen::ArrayXd v = img.channels() == 3 ? luminance(img).cast<double>() : img.values().cast<double>();
    v = (v + 1.0) * 0.5;
    return Plane(Eigen::Map<const Plane>(v.data(), img.height(), img.width()));
  };
  const Plane a = lum(x), b = lum(y);
  Eigen::ArrayXd k(window);
  const double c = (window - 1) / 2.0;
  for (int i = 0; i < window; ++i) k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  k /= k.sum();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Plane mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  const Plane saa = filter_valid(a * a, k) - mu_a * mu_a;
  const Plane sbb = filter_valid(b * b, k) - mu_b * mu_b;
  const Plane sab = filter_valid(a * b, k) - mu_a * mu_b;
  const Plane map = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
  return map.mean();
}

Embedder extractor_embedder(std::shared_ptr<const FeatureExtractor<float>> f) {
  if (!f) throw ValidationError("embedder needs an extractor");
  return [f](const ImageTensor& img) {
    ad::NoGradGuard g;
    const auto levels = f->extract(as_var(img));
    if (levels.empty()) throw ValidationError("extractor produced no levels");
    return Eigen::VectorXd(levels.back().value().cast<double>().matrix());
  };
}

double identity_similarity(const ImageTensor& x, const ImageTensor& y, const Embedder& embedder) {
  if (!embedder) throw ValidationError("identity_similarity needs an embedder");
  const Eigen::VectorXd a = embedder(x), b = embedder(y);
  if (a.size() != b.size()) throw ValidationError("embeddings differ in size");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) {
    log::warn("identity_similarity: zero-norm embedding, similarity taken as 0");
    return 0.0;
  }
  if (a == b) return 1.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

OptimizationResult invert_by_optimization(const GeneratorHandle& g, const ImageTensor& x, int iterations,
                                          const LatentCode& init, const LossWeights& weights,
                                          const LossExtractors<float>& extractors, const OptimizationOptions& opt) {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  g.check_latent(init);
  weights.validate();
  const int r = g.output_resolution();
  if (x.height() != r || x.width() != r || x.channels() != 3)
    throw ValidationError("target must be 3x" + std::to_string(r) + "x" + std::to_string(r));

  auto w = ad::Var<float>::parameter(ad::Shape::vec(init.size()), Eigen::ArrayXf(init.flat().array()));
  std::unique_ptr<optim::Optimizer<float>> o;
  if (opt.optimizer == LatentOptimizer::Adam) {
    optim::AdamOptions a;
    a.lr = opt.lr;
    o = std::make_unique<optim::Adam<float>>(std::vector{w}, a);
  } else {
    optim::RangerOptions a;
    a.lr = opt.lr;
    o = std::make_unique<optim::Ranger<float>>(std::vector{w}, a);
  }
  const auto target = as_var(x);
  OptimizationResult res;
  res.latent = init;
  res.best_loss = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= iterations; ++it) {
    o->zero_grad();
    const auto y = synthesize_graph(g, w);
    const auto loss = total_loss<float>(target, y, weights, extractors, opt.pixel_norm);
    const double v = loss.total.item();
    res.history.push_back(v);
    if (it == 0) res.initial_loss = v;
    if (!std::isfinite(v)) {
      res.non_finite = true;
      log::warn("latent optimization stopped at iteration " + std::to_string(it) + ": non-finite loss");
      break;
    }
    if (v < res.best_loss) {
      res.best_loss = v;
      res.best_iteration = it;
      res.latent.flat() = w.value().matrix();
    }
    res.iterations_run = it;
    if (it == iterations) break;
    ad::backward(loss.total);
    o->step();
  }
  if (!std::isfinite(res.best_loss)) res.best_loss = res.initial_loss;
  return res;
}

namespace {

using Pipeline = std::vector<std::shared_ptr<const Encoder>>;

double pipeline_params(const Pipeline& p, int n) {
  long long total = 0;
  for (int i = 0; i < n; ++i) total += param_count(*p[i]);
  return total / 1e6;
}

LatentCode run_pipeline(const Pipeline& p, int n, const GeneratorHandle& g, const ImageTensor& img) {
  std::vector<const InversionStage*> raw;
  for (const auto& e : p) raw.push_back(e.get());
  return invert(raw, g, fit_to(img, p.front()->input_resolution()), n).latent;
}

void check_pipeline(const Pipeline& p, int n) {
  if (p.empty()) throw ValidationError("pipeline is empty");
  if (n < 1 || n > static_cast<int>(p.size())) throw ValidationError("stage count outside the pipeline");
}

class EncoderMethod final : public BenchMethod {
 public:
  EncoderMethod(std::string name, Pipeline p, int n, GeneratorHandle g)
      : name_(std::move(name)), p_(std::move(p)), n_(n), g_(std::move(g)) {
    check_pipeline(p_, n_);
  }
  std::string name() const override { return name_; }
  double param_millions() const override { return pipeline_params(p_, n_); }
  LatentCode invert(const Sample& s) const override { return run_pipeline(p_, n_, g_, s.image); }

 private:
  std::string name_;
  Pipeline p_;
  int n_;
  GeneratorHandle g_;
};

class OptimizationMethod final : public BenchMethod {
 public:
  OptimizationMethod(std::string name, GeneratorHandle g, LatentCode init, int iterations, LossWeights w,
                     LossExtractors<float> ex, OptimizationOptions opt)
      : name_(std::move(name)),
        g_(std::move(g)),
        init_(std::move(init)),
        iterations_(iterations),
        w_(w),
        ex_(std::move(ex)),
        opt_(opt) {}
  std::string name() const override { return name_; }
  double param_millions() const override { return 0.0; }
  LatentCode invert(const Sample& s) const override {
    return invert_by_optimization(g_, fit_to(s.image, g_.output_resolution()), iterations_, init_, w_, ex_, opt_)
        .latent;
  }

 private:
  std::string name_;
  GeneratorHandle g_;
  LatentCode init_;
  int iterations_;
  LossWeights w_;
  LossExtractors<float> ex_;
  OptimizationOptions opt_;
};

class HybridMethod final : public BenchMethod {
 public:
  HybridMethod(std::string name, Pipeline p, int n, GeneratorHandle g, int iterations, LossWeights w,
               LossExtractors<float> ex, OptimizationOptions opt)
      : name_(std::move(name)),
        p_(std::move(p)),
        n_(n),
        g_(std::move(g)),
        iterations_(iterations),
        w_(w),
        ex_(std::move(ex)),
        opt_(opt) {
    check_pipeline(p_, n_);
  }
  std::string name() const override { return name_; }
  double param_millions() const override { return pipeline_params(p_, n_); }
  LatentCode invert(const Sample& s) const override {
    const LatentCode init = run_pipeline(p_, n_, g_, s.image);
    return invert_by_optimization(g_, fit_to(s.image, g_.output_resolution()), iterations_, init, w_, ex_, opt_)
        .latent;
  }

 private:
  std::string name_;
  Pipeline p_;
  int n_;
  GeneratorHandle g_;
  int iterations_;
  LossWeights w_;
  LossExtractors<float> ex_;
  OptimizationOptions opt_;
};

class ReplayMethod final : public BenchMethod {
 public:
  explicit ReplayMethod(std::string name) : name_(std::move(name)) {}
  std::string name() const override { return name_; }
  double param_millions() const override { return 0.0; }
  LatentCode invert(const Sample& s) const override {
    if (!s.latent) throw DataError("sample " + s.name + " has no source latent to replay");
    return *s.latent;
  }

 private:
  std::string name_;
};

}  // namespace

std::shared_ptr<BenchMethod> encoder_method(std::string name, Pipeline pipeline, int n_stages, GeneratorHandle g) {
  return std::make_shared<EncoderMethod>(std::move(name), std::move(pipeline), n_stages, std::move(g));
}

std::shared_ptr<BenchMethod> optimization_method(std::string name, GeneratorHandle g, LatentCode init, int iterations,
                                                 LossWeights weights, LossExtractors<float> extractors,
                                                 OptimizationOptions opt) {
  return std::make_shared<OptimizationMethod>(std::move(name), std::move(g), std::move(init), iterations, weights,
                                              std::move(extractors), opt);
}

std::shared_ptr<BenchMethod> hybrid_method(std::string name, Pipeline pipeline, int n_stages, GeneratorHandle g,
                                           int iterations, LossWeights weights, LossExtractors<float> extractors,
                                           OptimizationOptions opt) {
  return std::make_shared<HybridMethod>(std::move(name), std::move(pipeline), n_stages, std::move(g), iterations,
                                        weights, std::move(extractors), opt);
}

std::shared_ptr<BenchMethod> replay_method(std::string name) { return std::make_shared<ReplayMethod>(std::move(name)); }

std::vector<std::shared_ptr<BenchMethod>> load_methods(const std::filesystem::path& manifest, const GeneratorHandle& g,
                                                       const LossExtractors<float>& extractors,
                                                       const LossWeights& weights) {
  std::ifstream in(manifest);
  if (!in) throw IoError("method manifest not found: " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("method manifest is not valid JSON: " + std::string(e.what()));
  }
  const auto base = manifest.parent_path();
  std::vector<std::shared_ptr<BenchMethod>> out;
  for (const auto& m : j.at("methods")) {
    const std::string name = m.at("name").get<std::string>();
    const std::string type = m.at("type").get<std::string>();
    OptimizationOptions opt;
    opt.lr = m.value("lr", opt.lr);
    auto load_pipeline = [&] {
      Pipeline p;
      for (const auto& c : m.at("checkpoints")) p.push_back(load_checkpoint(base / c.get<std::string>()));
      return p;
    };
    if (type == "encoder") {
      auto p = load_pipeline();
      const int n = m.value("stages", static_cast<int>(p.size()));
      out.push_back(encoder_method(name, std::move(p), n, g));
    } else if (type == "hybrid") {
      auto p = load_pipeline();
      const int n = m.value("stages", static_cast<int>(p.size()));
      out.push_back(hybrid_method(name, std::move(p), n, g, m.value("iterations", 100), weights, extractors, opt));
    } else if (type == "optimization") {
      const LatentCode init = mean_latent(g, gaussian_sampler(g.n_codes(), g.dim()), m.value("mean_samples", 1000),
                                          m.value("seed", 0));
      out.push_back(optimization_method(name, g, init, m.value("iterations", 1000), weights, extractors, opt));
    } else if (type == "replay") {
      out.push_back(replay_method(name));
    } else {
      throw ConfigError("unknown method type '" + type + "'");
    }
  }
  return out;
}

nlohmann::json BenchReport::to_json() const {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = {{"name", r.name}, {"status", r.ok ? "ok" : "failed"}};
    if (r.ok) {
      row["ssim"] = num(r.ssim);
      row["psnr"] = num(r.psnr);
      row["ids"] = num(r.ids);
      row["pixel_loss"] = num(r.pixel_loss);
      row["runtime_seconds"] = num(r.runtime_seconds);
      row["param_millions"] = num(r.param_millions);
      row["images"] = r.images;
    } else {
      row["error"] = r.error;
    }
    rows_j.push_back(row);
  }
  return {{"dataset", dataset}, {"environment", environment}, {"methods", rows_j}};
}

std::string BenchReport::to_markdown() const {
  std::ostringstream s;
  auto fmt = [](double v, int prec) {
    if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
  };
  s << "| Method | SSIM | PSNR | IDS | RunTime(s) | Param(M) |\n";
  s << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (!r.ok) {
      s << "| " << r.name << " | failed | failed | failed | failed | failed |\n";
      continue;
    }
    s << "| " << r.name << " | " << fmt(r.ssim, 4) << " | " << fmt(r.psnr, 2) << " | " << fmt(r.ids, 4) << " | "
      << fmt(r.runtime_seconds, 4) << " | " << fmt(r.param_millions, 3) << " |\n";
  }
  for (const auto& r : rows)
    if (!r.ok) s << "\n" << r.name << " failed: " << r.error << "\n";
  return s.str();
}

const BenchRow* BenchReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

BenchReport run_benchmark(const Dataset& data, const std::vector<std::shared_ptr<BenchMethod>>& methods,
                          const GeneratorHandle& g, const Embedder& embedder, const std::string& dataset_name) {
  if (data.empty()) throw ValidationError("benchmark dataset is empty");
  BenchReport rep;
  rep.dataset = {{"name", dataset_name}, {"images", data.size()},
                 {"resolution", data.samples.front().image.height()}};
  rep.environment = {{"compiler", __VERSION__},
                     {"hardware_threads", std::thread::hardware_concurrency()},
                     {"generator", g.family()}};
  const int r = g.output_resolution();
  for (const auto& m : methods) {
    BenchRow row;
    row.name = m->name();
    try {
      row.param_millions = m->param_millions();
      (void)m->invert(data.samples.front());  // warmup
      std::vector<double> times;
      for (const auto& s : data.samples) {
        const auto t0 = std::chrono::steady_clock::now();
        const LatentCode w = m->invert(s);
        const ImageTensor rec = synthesize(g, w);
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        const ImageTensor ref = fit_to(s.image, r);
        row.ssim += ssim(ref, rec, std::min(11, r));
        row.psnr += psnr(ref, rec);
        row.ids += embedder ? identity_similarity(ref, rec, embedder) : 0.0;
        row.pixel_loss += pixel_loss(ref, rec);
      }
      const double n = static_cast<double>(data.size());
      row.ssim /= n;
      row.psnr /= n;
      row.ids /= n;
      row.pixel_loss /= n;
      std::sort(times.begin(), times.end());
      const std::size_t k = times.size();
      row.runtime_seconds = k % 2 ? times[k / 2] : 0.5 * (times[k / 2 - 1] + times[k / 2]);
      row.runtime_seconds = std::max(row.runtime_seconds, 1e-9);
      row.images = static_cast<int>(k);
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      log::warn("benchmark method " + row.name + " failed: " + e.what());
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace wplus
