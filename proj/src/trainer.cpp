#include "wplus/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"
#include "wplus/image_io.hpp"
#include "wplus/latent_io.hpp"
#include "wplus/log.hpp"
#include "wplus/optim.hpp"

namespace wplus {

std::string to_string(Task t) {
  switch (t) {
    case Task::Inversion: return "inversion";
    case Task::Colorization: return "colorization";
    case Task::Inpainting: return "inpainting";
    case Task::SuperResolution: return "super_resolution";
    case Task::Sketch2Image: return "sketch2image";
    case Task::Seg2Image: return "seg2image";
  }
  return "?";
}

Task task_from(const std::string& s) {
  for (Task t : {Task::Inversion, Task::Colorization, Task::Inpainting, Task::SuperResolution, Task::Sketch2Image,
                 Task::Seg2Image})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown task '" + s + "'");
}

bool needs_aux(Task t) { return t == Task::Sketch2Image || t == Task::Seg2Image; }

void TrainConfig::validate() const {
  if (!(base_learning_rate > 0)) throw ValidationError("learning rate must be > 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw ValidationError("flip probability must be in [0, 1]");
  if (max_steps < 0) throw ValidationError("max_steps must be >= 0");
  weights.validate();
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.base_learning_rate = kv.get_double("train.lr", c.base_learning_rate);
  c.epochs = kv.get_int("train.epochs", c.epochs);
  c.batch_size = kv.get_int("train.batch_size", c.batch_size);
  c.flip_probability = kv.get_double("train.flip_probability", c.flip_probability);
  c.task = task_from(kv.get("train.task", "inversion"));
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 0));
  c.max_steps = kv.get_int("train.max_steps", 0);
  const std::string norm = kv.get("loss.pixel_norm", "rms");
  if (norm == "rms") {
    c.pixel_norm = PixelNorm::Rms;
  } else if (norm == "raw") {
    c.pixel_norm = PixelNorm::Raw;
  } else {
    throw ConfigError("loss.pixel_norm must be rms or raw");
  }
  c.weights = loss_weights_from(kv);
  c.validate();
  return c;
}

ImageTensor fit_to(const ImageTensor& img, int side) {
  if (img.height() == side && img.width() == side) return img;
  return resize_bilinear(img, side, side);
}

Dataset Dataset::load_dir(const std::filesystem::path& dir, int resolution,
                          const std::optional<std::filesystem::path>& paired) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Dataset d;
  for (const auto& f : files) {
    Sample s;
    s.name = f.filename().string();
    s.image = load_image(f);
    if (resolution > 0) s.image = fit_to(s.image, resolution);
    if (paired) {
      const auto p = *paired / f.filename();
      if (std::filesystem::exists(p)) {
        ImageTensor aux = load_image(p);
        s.aux = resolution > 0 ? fit_to(aux, resolution) : aux;
      }
    }
    auto wl = f;
    wl.replace_extension(".wlat");
    if (std::filesystem::exists(wl)) s.latent = load_latent(wl);
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset Dataset::sample(const GeneratorHandle& g, const LatentSampler& sampler, int n, std::uint64_t seed) {
  if (n < 0) throw ValidationError("sample count must be >= 0");
  std::mt19937_64 rng(seed);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    Sample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%05d", i);
    s.name = buf;
    s.latent = sampler(rng);
    s.image = synthesize(g, *s.latent);
    d.samples.push_back(std::move(s));
  }
  return d;
}

namespace {

ImageTensor to_three_channels(const ImageTensor& aux, int h, int w) {
  ImageTensor a = aux;
  if (a.channels() == 1) {
    Eigen::ArrayXf v(3 * a.plane());
    v << a.values(), a.values(), a.values();
    a = ImageTensor(a.height(), a.width(), 3, std::move(v));
  } else if (a.channels() != 3) {
    throw DataError("aux image must have 1 or 3 channels");
  }
  if (a.height() != h || a.width() != w) a = resize_bilinear(a, h, w);
  return a;
}

}  // namespace

Example augment(const ImageTensor& x, const std::optional<ImageTensor>& aux, Task task, std::mt19937_64& rng) {
  switch (task) {
    case Task::Inversion:
      return {x, x};
    case Task::Colorization:
      return {grayscale(x), x};
    case Task::Inpainting: {
      const int h = x.height(), w = x.width();
      auto side = [&](int n) {
        const int lo = std::max(1, static_cast<int>(std::ceil(0.25 * n)));
        const int hi = std::max(lo, static_cast<int>(std::floor(0.5 * n)));
        return std::uniform_int_distribution<int>(lo, hi)(rng);
      };
      const int rh = side(h), rw = side(w);
      const int y0 = std::uniform_int_distribution<int>(0, h - rh)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, w - rw)(rng);
      ImageTensor in = x;
      for (int c = 0; c < in.channels(); ++c)
        for (int yy = y0; yy < y0 + rh; ++yy)
          for (int xx = x0; xx < x0 + rw; ++xx) in.at(c, yy, xx) = 0.0f;
      return {in, x};
    }
    case Task::SuperResolution: {
      std::vector<int> scales;
      for (int s : {1, 2, 4, 8, 16})
        if (x.height() % s == 0 && x.width() % s == 0) scales.push_back(s);
      const int s = scales[std::uniform_int_distribution<std::size_t>(0, scales.size() - 1)(rng)];
      return {upsample_nearest(downsample(x, s), s), x};
    }
    case Task::Sketch2Image:
    case Task::Seg2Image:
      if (!aux) throw DataError(to_string(task) + " needs a paired sketch or label map");
      return {to_three_channels(*aux, x.height(), x.width()), x};
  }
  throw ValidationError("unknown task");
}

Example prepare_example(const Sample& s, Task task, double flip_probability, std::mt19937_64& rng) {
  const bool flip = std::bernoulli_distribution(flip_probability)(rng);
  if (!flip) return augment(s.image, s.aux, task, rng);
  std::optional<ImageTensor> aux;
  if (s.aux) aux = hflip(*s.aux);
  return augment(hflip(s.image), aux, task, rng);
}

PipelineState invert(const std::vector<const InversionStage*>& pipeline, const GeneratorHandle& g,
                     const ImageTensor& x, int n_stages) {
  if (n_stages < 1 || n_stages > static_cast<int>(pipeline.size()))
    throw ValidationError("n_stages must be in [1, " + std::to_string(pipeline.size()) + "], got " +
                          std::to_string(n_stages));
  const int res = pipeline[0]->input_resolution();
  if (x.height() != res || x.width() != res)
    throw ValidationError("input is " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                          ", pipeline expects " + std::to_string(res) + "x" + std::to_string(res));
  PipelineState st;
  st.latent = encode(*pipeline[0], x);
  st.render = synthesize(g, st.latent);
  for (int t = 1; t < n_stages; ++t) {
    const auto& e = *pipeline[t];
    st.latent = encode_refine(e, x, fit_to(st.render, e.input_resolution()), st.latent);
    st.render = synthesize(g, st.latent);
  }
  return st;
}

namespace {

LossTerms& accumulate(LossTerms& acc, const LossTerms& t, double s = 1.0) {
  acc.pixel += s * t.pixel;
  acc.perceptual += s * t.perceptual;
  acc.identity += s * t.identity;
  acc.parsing += s * t.parsing;
  acc.degenerate_levels += t.degenerate_levels;
  return acc;
}

nlohmann::json terms_json(const LossTerms& t) {
  return {{"pixel", t.pixel}, {"perceptual", t.perceptual}, {"identity", t.identity}, {"parsing", t.parsing}};
}

[[noreturn]] void numeric_abort(const TrainHooks& hooks, const Encoder& enc, long step, int epoch,
                                const std::string& sample, const LossTerms& terms, double total) {
  bool params_finite = true;
  for (const auto& e : enc.net().params().entries()) params_finite = params_finite && e.var.value().allFinite();
  nlohmann::json dump = {{"step", step},          {"epoch", epoch},
                         {"sample", sample},      {"total", std::isfinite(total) ? nlohmann::json(total) : "non-finite"},
                         {"terms", terms_json(terms)}, {"parameters_finite", params_finite}};
  std::string where;
  if (hooks.out_dir) {
    std::filesystem::create_directories(*hooks.out_dir);
    const auto p = *hooks.out_dir / "diagnostics.json";
    std::ofstream(p) << dump.dump(2) << '\n';
    where = " (dump: " + p.string() + ")";
  }
  throw NumericError("non-finite loss at step " + std::to_string(step) + ", sample " + sample + ": " +
                     dump.dump() + where);
}

}  // namespace

TrainResult train_stage(int stage, const Dataset& data, const GeneratorHandle& g,
                        const std::vector<const Encoder*>& prev, const TrainConfig& cfg, const EncoderConfig& enc_cfg,
                        const LossExtractors<float>& extractors, const TrainHooks& hooks) {
  if (stage != static_cast<int>(prev.size()) + 1)
    throw ValidationError("stage " + std::to_string(stage) + " needs exactly " + std::to_string(stage - 1) +
                          " frozen previous stages, got " + std::to_string(prev.size()));
  auto enc = std::make_unique<Encoder>(build_encoder(enc_cfg, stage, cfg.seed * 1000003ULL + stage));
  return train_stage(std::move(enc), data, g, prev, cfg, extractors, hooks);
}

TrainResult train_stage(std::unique_ptr<Encoder> encoder, const Dataset& data, const GeneratorHandle& g,
                        const std::vector<const Encoder*>& prev, const TrainConfig& cfg,
                        const LossExtractors<float>& extractors, const TrainHooks& hooks) {
  cfg.validate();
  if (!encoder) throw ValidationError("no encoder to train");
  const int stage = encoder->stage_index();
  if (stage != static_cast<int>(prev.size()) + 1)
    throw ValidationError("stage " + std::to_string(stage) + " needs exactly " + std::to_string(stage - 1) +
                          " frozen previous stages, got " + std::to_string(prev.size()));
  for (std::size_t i = 0; i < prev.size(); ++i)
    if (!prev[i] || prev[i]->stage_index() != static_cast<int>(i) + 1)
      throw ValidationError("previous stages must be ordered 1.." + std::to_string(prev.size()));
  if (data.empty()) throw ValidationError("training dataset is empty");
  if (!g.valid()) throw ValidationError("no generator");
  if (encoder->config().n_codes != g.n_codes() || encoder->config().dim != g.dim())
    throw ValidationError("encoder emits " + std::to_string(encoder->config().n_codes) + "x" +
                          std::to_string(encoder->config().dim) + " but the generator takes " +
                          std::to_string(g.n_codes()) + "x" + std::to_string(g.dim()));

  const std::vector<const InversionStage*> frozen(prev.begin(), prev.end());
  const int enc_res = encoder->input_resolution();
  const int gen_res = g.output_resolution();

  auto& params = encoder->net().params();
  params.set_requires_grad(true);
  std::vector<ad::Var<float>> leaves;
  for (auto& e : params.entries()) leaves.push_back(e.var);
  optim::RangerOptions ropt;
  ropt.lr = cfg.base_learning_rate;
  optim::Ranger<float> opt(leaves, ropt);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  const long steps_per_epoch = (static_cast<long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long step = 0;
  const auto ckpt = [&](int epoch) {
    if (!hooks.out_dir) return;
    CheckpointInfo info;
    info.config = encoder->config();
    info.stage_index = stage;
    info.epoch = epoch;
    info.loss_weights = cfg.weights;
    save_checkpoint(*encoder, info, *hooks.out_dir);
  };
  std::ofstream log_file;
  if (hooks.out_dir) {
    std::filesystem::create_directories(*hooks.out_dir);
    log_file.open(*hooks.out_dir / "log.jsonl");
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog elog;
    elog.epoch = epoch;
    long epoch_steps = 0;
    for (long b = 0; b < steps_per_epoch; ++b) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      ++step;
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const float inv_b = 1.0f / static_cast<float>(end - begin);
      const ad::Array<float> seed = ad::Array<float>::Constant(1, inv_b);
      params.zero_grad();
      double batch_total = 0;
      LossTerms batch_terms;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = data.samples[order[k]];
        const Example ex = prepare_example(s, cfg.task, cfg.flip_probability, rng);
        const ImageTensor input = fit_to(ex.input, enc_res);
        const ImageTensor target = fit_to(ex.target, gen_res);
        ad::Var<float> latent;
        if (stage == 1) {
          latent = encoder->net().forward(as_var(input));
        } else {
          const PipelineState st = invert(frozen, g, input, stage - 1);
          const auto residual = encoder->net().forward(as_var(concat_channels(input, fit_to(st.render, enc_res))));
          const auto base = ad::Var<float>::constant(ad::Shape::vec(st.latent.size()),
                                                     Eigen::ArrayXf(st.latent.flat().array()));
          latent = ad::add(base, residual);
        }
        const auto y = synthesize_graph(g, latent);
        const auto loss = total_loss<float>(as_var(target), y, cfg.weights, extractors, cfg.pixel_norm);
        const double v = loss.total.item();
        if (!std::isfinite(v)) numeric_abort(hooks, *encoder, step, epoch, s.name, loss.terms, v);
        ad::backward(loss.total, &seed);
        batch_total += v;
        accumulate(batch_terms, loss.terms);
      }
      const double n = static_cast<double>(end - begin);
      batch_total /= n;
      LossTerms mean_terms;
      accumulate(mean_terms, batch_terms, 1.0 / n);
      mean_terms.degenerate_levels = batch_terms.degenerate_levels;
      if (step == 1) result.first_step_loss = batch_total;
      opt.step();
      ++epoch_steps;
      elog.mean_total += batch_total;
      accumulate(elog.mean_terms, mean_terms);
      if (hooks.on_step) hooks.on_step({step, epoch, batch_total, mean_terms});
    }
    if (epoch_steps == 0) break;
    elog.steps = step;
    elog.mean_total /= epoch_steps;
    const int degenerate = elog.mean_terms.degenerate_levels;
    LossTerms scaled;
    accumulate(scaled, elog.mean_terms, 1.0 / epoch_steps);
    scaled.degenerate_levels = degenerate;
    elog.mean_terms = scaled;
    elog.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(elog);
    if (log_file) {
      nlohmann::json line = {{"epoch", elog.epoch}, {"steps", elog.steps}, {"loss", elog.mean_total},
                             {"terms", terms_json(elog.mean_terms)}, {"seconds", elog.seconds}};
      log_file << line.dump() << '\n' << std::flush;
    }
    if (hooks.on_epoch) hooks.on_epoch(elog);
    ckpt(epoch);
  }
  params.set_requires_grad(false);
  result.steps = step;
  result.encoder = std::move(encoder);
  return result;
}

SplitResult search_latent_split(const SplitSearchConfig& cfg) {
  if (cfg.epsilon < 0) throw ValidationError("epsilon must be >= 0");
  if (cfg.total_codes < 3) throw ValidationError("total_codes must be >= 3");
  if (cfg.min_part != 0 && cfg.min_part != 1) throw ValidationError("min_part must be 0 or 1");
  if (!cfg.quality_fn) throw ValidationError("quality_fn is required");
  const int total = cfg.total_codes, mn = cfg.min_part;

  SplitResult r;
  std::map<std::pair<int, int>, double> memo;
  auto q = [&](int n1, int n2) {
    auto [it, fresh] = memo.try_emplace({n1, n2}, 0.0);
    if (fresh) {
      it->second = cfg.quality_fn(n1, n2, total - n1 - n2);
      ++r.evaluations;
    }
    return it->second;
  };
  auto q1 = [&](int n1) {
    double best = -std::numeric_limits<double>::infinity();
    for (int n2 = mn; n2 <= total - n1 - mn; ++n2) best = std::max(best, q(n1, n2));
    return best;
  };

  double best = -std::numeric_limits<double>::infinity();
  for (int n1 = mn; n1 <= total - 2 * mn; ++n1) best = std::max(best, q1(n1));
  const double threshold = best - cfg.epsilon * std::abs(best);
  r.best_quality = best;

  // smallest x in [lo, hi] with pred(x); pred(hi) holds
  auto first_true = [](int lo, int hi, const std::function<bool(int)>& pred) {
    while (lo < hi) {
      const int mid = lo + (hi - lo) / 2;
      if (pred(mid)) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    return lo;
  };
  // prefix maxima make each predicate monotone regardless of the landscape
  auto reach1 = [&](int n1) {
    for (int m = mn; m <= n1; ++m)
      if (q1(m) >= threshold) return true;
    return false;
  };
  const int n1 = first_true(mn, total - 2 * mn, reach1);
  auto reach2 = [&](int n2) {
    for (int m = mn; m <= n2; ++m)
      if (q(n1, m) >= threshold) return true;
    return false;
  };
  const int n2 = first_true(mn, total - n1 - mn, reach2);
  r.n1 = n1;
  r.n2 = n2;
  r.n3 = total - n1 - n2;
  r.quality = q(n1, n2);

  // Plain bisection up to the last acceptable value; it only disagrees when the
  // acceptable set has gaps, i.e. the landscape is not monotone.
  auto last_true = [](int lo, int hi, const std::function<bool(int)>& pred) {
    int last = lo;
    for (int m = lo; m <= hi; ++m)
      if (pred(m)) last = m;
    return last;
  };
  const std::function<bool(int)> ok1 = [&](int m) { return q1(m) >= threshold; };
  const std::function<bool(int)> ok2 = [&](int m) { return q(n1, m) >= threshold; };
  const int plain1 = first_true(mn, last_true(mn, total - 2 * mn, ok1), ok1);
  const int plain2 = first_true(mn, last_true(mn, total - n1 - mn, ok2), ok2);
  if (plain1 != n1 || plain2 != n2) {
    r.non_monotone = true;
    r.warning = "quality is not monotone along the search: plain bisection gives (" + std::to_string(plain1) + ", " +
                std::to_string(plain2) + "), envelope search gives (" + std::to_string(n1) + ", " +
                std::to_string(n2) + ")";
    log::warn("split search: " + r.warning);
  }
  const double size = cfg.size_fn ? cfg.size_fn(r.n1, r.n2, r.n3) : 0.0;
  r.objective = -r.quality + cfg.tradeoff_lambda * size;
  return r;
}

}  // namespace wplus
