#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"
#include "wplus/log.hpp"
#include "wplus/optim.hpp"
#include "wplus/trainer.hpp"

using namespace wplus;
namespace fs = std::filesystem;

namespace {

ImageTensor random_image(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  ImageTensor x(side, side);
  for (auto& v : x.values()) v = d(rng);
  return x;
}

// Refinement stage whose residual is a fixed constant.
class ConstantStage final : public InversionStage {
 public:
  ConstantStage(int stage, LatentCode c) : stage_(stage), c_(std::move(c)) {}
  int stage_index() const override { return stage_; }
  int input_resolution() const override { return 32; }
  LatentCode predict(const ImageTensor& input) const override {
    if (input.channels() != 6) throw ValidationError("expected 6 channels");
    return c_;
  }

 private:
  int stage_;
  LatentCode c_;
};

struct Toy {
  GeneratorHandle g = make_toy_generator(7, 6, 16, 32);
  EncoderConfig enc = EncoderConfig::toy();
  Dataset data = Dataset::sample(g, gaussian_sampler(6, 16), 6, 1);
  TrainConfig cfg = [] {
    TrainConfig c;
    c.base_learning_rate = 1e-3;
    c.batch_size = 2;
    c.epochs = 1;
    c.max_steps = 3;
    c.weights = {1, 0, 0, 0};
    c.seed = 5;
    return c;
  }();
};

std::vector<Eigen::ArrayXf> snapshot(const Encoder& e) {
  std::vector<Eigen::ArrayXf> out;
  for (const auto& p : e.net().params().entries()) out.push_back(p.var.value());
  return out;
}

std::array<int, 3> parts(const SplitResult& r) { return {r.n1, r.n2, r.n3}; }

bool equal(const std::vector<Eigen::ArrayXf>& a, const std::vector<Eigen::ArrayXf>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || !(a[i] == b[i]).all()) return false;
  return true;
}

}  // namespace

TEST(Optimizer, RangerSolvesToyQuadratic) {
  // f(x) = sum a_i (x_i - c_i)^2 with spread curvatures
  const ad::Array<double> a = ad::Array<double>::LinSpaced(10, 0.5, 5.0);
  const ad::Array<double> c = ad::Array<double>::LinSpaced(10, -2.0, 2.0);
  auto x = ad::Var<double>::parameter(ad::Shape::vec(10), ad::Array<double>::Zero(10));
  optim::Ranger<double> opt({x}, optim::RangerOptions{.lr = 0.05});
  double loss = 0;
  for (int t = 0; t < 500; ++t) {
    opt.zero_grad();
    auto f = ad::sum(ad::mul(ad::Var<double>::constant(ad::Shape::vec(10), a), ad::square(ad::sub(x, ad::Var<double>::constant(ad::Shape::vec(10), c)))));
    loss = f.item();
    ad::backward(f);
    opt.step();
  }
  EXPECT_LT(loss, 1e-3);
  EXPECT_EQ(opt.steps(), 500);
}

TEST(Optimizer, AdamSolvesToyQuadratic) {
  auto x = ad::Var<double>::parameter(ad::Shape::vec(4), ad::Array<double>::Constant(4, 3.0));
  optim::Adam<double> opt({x}, optim::AdamOptions{.lr = 0.05});
  for (int t = 0; t < 500; ++t) {
    opt.zero_grad();
    auto f = ad::sum_squares(x);
    ad::backward(f);
    opt.step();
  }
  EXPECT_LT(ad::sum_squares(x).item(), 1e-3);
}

TEST(Augment, TaskContracts) {
  std::mt19937_64 rng(1);
  const auto x = random_image(32, 2);
  auto inv = augment(x, std::nullopt, Task::Inversion, rng);
  EXPECT_EQ(inv.input, x);
  EXPECT_EQ(inv.target, x);

  const auto gray = grayscale(x);
  auto col = augment(gray, std::nullopt, Task::Colorization, rng);
  EXPECT_EQ(col.input, col.target);
  EXPECT_EQ(augment(x, std::nullopt, Task::Colorization, rng).input, grayscale(x));

  for (int t = 0; t < 50; ++t) {
    auto ex = augment(x, std::nullopt, Task::Inpainting, rng);
    EXPECT_EQ(ex.target, x);
    // zeroed region is a rectangle with sides in [8, 16]
    int y0 = 32, y1 = -1, x0 = 32, x1 = -1;
    for (int yy = 0; yy < 32; ++yy)
      for (int xx = 0; xx < 32; ++xx)
        if (ex.input.at(0, yy, xx) != x.at(0, yy, xx)) {
          y0 = std::min(y0, yy), y1 = std::max(y1, yy), x0 = std::min(x0, xx), x1 = std::max(x1, xx);
          EXPECT_EQ(ex.input.at(0, yy, xx), 0.0f);
        }
    ASSERT_GE(y1, 0);
    EXPECT_GE(y1 - y0 + 1, 8);
    EXPECT_LE(y1 - y0 + 1, 16);
    EXPECT_GE(x1 - x0 + 1, 8);
    EXPECT_LE(x1 - x0 + 1, 16);
  }

  bool saw_identity = false;
  for (int t = 0; t < 60; ++t) {
    auto sr = augment(x, std::nullopt, Task::SuperResolution, rng);
    EXPECT_EQ(sr.target, x);
    bool matched = false;
    for (int s : {1, 2, 4, 8, 16})
      if (sr.input == upsample_nearest(downsample(x, s), s)) matched = true, saw_identity |= s == 1 && sr.input == x;
    EXPECT_TRUE(matched);
  }
  EXPECT_TRUE(saw_identity);

  EXPECT_THROW(augment(x, std::nullopt, Task::Sketch2Image, rng), DataError);
  const auto sketch = random_image(32, 9);
  EXPECT_EQ(augment(x, sketch, Task::Sketch2Image, rng).target, x);
  ImageTensor label(32, 32, 1);
  EXPECT_EQ(augment(x, label, Task::Seg2Image, rng).input.channels(), 3);
}

TEST(Augment, FlipIsExactMirror) {
  Sample s{"a", random_image(16, 3), std::nullopt, std::nullopt};
  std::mt19937_64 r0(4), r1(4);
  const auto keep = prepare_example(s, Task::Inversion, 0.0, r0);
  const auto flip = prepare_example(s, Task::Inversion, 1.0, r1);
  EXPECT_EQ(keep.input, s.image);
  EXPECT_EQ(flip.input, hflip(keep.input));
  EXPECT_EQ(flip.target, hflip(keep.target));
  EXPECT_NE(flip.input, keep.input);
}

TEST(Invert, RecursionWithStubStages) {
  Toy t;
  const auto e1 = build_encoder(t.enc, 1, 3);
  const auto x = t.data.samples[0].image;
  const auto one = invert({&e1}, t.g, x, 1);
  EXPECT_EQ(one.latent, encode(e1, x));
  EXPECT_EQ(one.render, synthesize(t.g, one.latent));

  const ConstantStage zero2(2, LatentCode(6, 16)), zero3(3, LatentCode(6, 16));
  EXPECT_EQ(invert({&e1, &zero2, &zero3}, t.g, x, 3).latent, one.latent);
  EXPECT_EQ(invert({&e1, &zero2, &zero3}, t.g, x, 2).render, one.render);

  const auto c = LatentCode::Constant(6, 16, 0.125f);
  const ConstantStage shift(2, c);
  EXPECT_EQ(invert({&e1, &shift}, t.g, x, 2).latent, one.latent + c);

  EXPECT_THROW(invert({&e1}, t.g, x, 2), ValidationError);
  EXPECT_THROW(invert({&e1}, t.g, x, 0), ValidationError);
  EXPECT_THROW(invert({&e1}, t.g, random_image(24, 1), 1), ValidationError);
}

TEST(TrainStage, DeterministicAndWritesArtifacts) {
  Toy t;
  const auto dir = fs::temp_directory_path() / "wplus_train_art";
  fs::remove_all(dir);
  TrainHooks hooks;
  hooks.out_dir = dir;
  int steps_seen = 0;
  hooks.on_step = [&](const StepInfo&) { ++steps_seen; };
  const auto a = train_stage(1, t.data, t.g, {}, t.cfg, t.enc, {}, hooks);
  const auto b = train_stage(1, t.data, t.g, {}, t.cfg, t.enc, {});
  EXPECT_EQ(a.steps, 3);
  EXPECT_EQ(steps_seen, 3);
  EXPECT_TRUE(equal(snapshot(*a.encoder), snapshot(*b.encoder)));
  EXPECT_FALSE(equal(snapshot(*a.encoder), snapshot(build_encoder(t.enc, 1, t.cfg.seed * 1000003ULL + 1))));
  EXPECT_TRUE(fs::exists(dir / "log.jsonl"));
  const auto back = load_checkpoint(dir);
  EXPECT_TRUE(equal(snapshot(*back), snapshot(*a.encoder)));
}

TEST(TrainStage, FreezesEarlierStages) {
  Toy t;
  const auto s1 = train_stage(1, t.data, t.g, {}, t.cfg, t.enc, {});
  const auto before = snapshot(*s1.encoder);
  const auto s2 = train_stage(2, t.data, t.g, {s1.encoder.get()}, t.cfg, t.enc, {});
  EXPECT_TRUE(equal(snapshot(*s1.encoder), before));
  EXPECT_EQ(s2.encoder->stage_index(), 2);
  EXPECT_THROW(train_stage(3, t.data, t.g, {s1.encoder.get()}, t.cfg, t.enc, {}), Error);
}

TEST(TrainStage, StageTwoStartsAtStageOneLoss) {
  Toy t;
  const auto s1 = train_stage(1, t.data, t.g, {}, t.cfg, t.enc, {});
  Dataset one;
  one.samples.push_back(t.data.samples[2]);
  auto cfg = t.cfg;
  cfg.batch_size = 1;
  cfg.flip_probability = 0;
  cfg.max_steps = 1;
  const auto s2 = train_stage(2, one, t.g, {s1.encoder.get()}, cfg, t.enc, {});
  const auto st = invert({s1.encoder.get()}, t.g, one.samples[0].image, 1);
  EXPECT_EQ(s2.first_step_loss, pixel_loss(st.render, one.samples[0].image));
}

TEST(TrainStage, ErrorsAreTyped) {
  Toy t;
  EXPECT_THROW(train_stage(1, Dataset{}, t.g, {}, t.cfg, t.enc, {}), ValidationError);

  Dataset bad = t.data;
  bad.samples[0].image.values()[5] = std::numeric_limits<float>::quiet_NaN();
  const auto dir = fs::temp_directory_path() / "wplus_train_nan";
  fs::remove_all(dir);
  TrainHooks hooks;
  hooks.out_dir = dir;
  auto cfg = t.cfg;
  cfg.flip_probability = 0;
  EXPECT_THROW(train_stage(1, bad, t.g, {}, cfg, t.enc, {}, hooks), NumericError);
  EXPECT_TRUE(fs::exists(dir / "diagnostics.json"));

  auto neg = t.cfg;
  neg.base_learning_rate = -1;
  EXPECT_THROW(train_stage(1, t.data, t.g, {}, neg, t.enc, {}), Error);
}

TEST(SplitSearch, StaircaseAndFlat) {
  SplitSearchConfig cfg;
  cfg.epsilon = 0;
  cfg.quality_fn = [](int a, int b, int c) { return std::min(a, 9) / 9.0 + std::min(b, 5) / 5.0 + std::min(c, 4) / 4.0; };
  auto r = search_latent_split(cfg);
  EXPECT_EQ(parts(r), (std::array<int, 3>{9, 5, 4}));
  EXPECT_EQ(oracle::best_split(18, 0, 0, cfg.quality_fn), (std::array<int, 3>{9, 5, 4}));
  EXPECT_FALSE(r.non_monotone);

  cfg.quality_fn = [](int, int, int) { return 0.7; };
  r = search_latent_split(cfg);
  EXPECT_EQ(parts(r), (std::array<int, 3>{0, 0, 18}));

  cfg.epsilon = -0.1;
  EXPECT_THROW(search_latent_split(cfg), ValidationError);
}

TEST(SplitSearch, AgreesWithExhaustiveOnMonotoneFunctions) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> knots(1, 6);
  for (int t = 0; t < 50; ++t) {
    // separable non-decreasing step functions, each with a few random jumps
    std::array<std::vector<double>, 3> f;
    for (auto& fi : f) {
      fi.assign(19, 0.0);
      const int k = knots(rng);
      for (int j = 0; j < k; ++j) {
        const int at = static_cast<int>(u(rng) * 18) + 1;
        const double h = u(rng);
        for (int n = at; n <= 18; ++n) fi[n] += h;
      }
    }
    auto q = [f](int a, int b, int c) { return f[0][a] + f[1][b] + f[2][c]; };
    for (int min_part : {0, 1}) {
      for (double eps : {0.0, 0.01, 0.1}) {
        SplitSearchConfig cfg;
        cfg.epsilon = eps;
        cfg.min_part = min_part;
        cfg.quality_fn = q;
        const auto r = search_latent_split(cfg);
        EXPECT_EQ(parts(r), oracle::best_split(18, eps, min_part, q))
            << "function " << t << " eps " << eps << " min_part " << min_part;
      }
    }
  }
}

TEST(SplitSearch, WarnsOnNonMonotoneLandscape) {
  SplitSearchConfig cfg;
  cfg.epsilon = 0;
  // acceptable at n1 = 2 and again from n1 = 10; bisection lands in the upper block
  cfg.quality_fn = [](int a, int b, int) { return (a == 2 && b == 3) || a >= 10 ? 1.0 : 0.0; };
  std::vector<std::string> warnings;
  auto prev = log::set_sink([&](log::Level, const std::string& m) { warnings.push_back(m); });
  const auto r = search_latent_split(cfg);
  log::set_sink(prev);
  EXPECT_EQ(parts(r), oracle::best_split(18, 0, 0, cfg.quality_fn));
  EXPECT_TRUE(r.non_monotone);
  EXPECT_FALSE(warnings.empty());
}
