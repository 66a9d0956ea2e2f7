#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fd.hpp"
#include "wplus/ad/ops.hpp"
#include "wplus/encoder.hpp"
#include "wplus/error.hpp"

using namespace wplus;
namespace fs = std::filesystem;

namespace {

ImageTensor random_image(int side, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  ImageTensor x(side, side, channels);
  for (auto& v : x.values()) v = d(rng);
  return x;
}

// Hand count for a 3-channel input: IR-SE stem + 3/4/14 units at 64/128/256, SE ratio 16.
long long reference_param_count() {
  long long n = 3 * 9 * 64 + 2 * 64 + 64;  // stem conv, bn, prelu
  struct Block { int in, depth; };
  std::vector<Block> blocks;
  int in = 64;
  for (auto [depth, units] : std::vector<std::pair<int, int>>{{64, 3}, {128, 4}, {256, 14}})
    for (int u = 0; u < units; ++u) blocks.push_back({std::exchange(in, depth), depth});
  for (const auto& b : blocks) {
    if (b.in != b.depth) n += b.in * b.depth + 2 * b.depth;  // 1x1 projection + bn
    n += 2 * b.in;                                           // pre bn
    n += 9LL * b.in * b.depth + b.depth;                     // conv1 + prelu
    n += 9LL * b.depth * b.depth + 2 * b.depth;              // conv2 + bn
    n += 2LL * b.depth * (b.depth / 16);                     // squeeze-excite
  }
  n += (256LL * 7 * 7) * (9 * 512) + 9 * 512;
  n += (128LL * 5 * 5) * (5 * 512) + 5 * 512;
  n += (64LL * 3 * 3) * (4 * 512) + 4 * 512;
  return n;
}

}  // namespace

TEST(Encoder, DefaultParameterCount) {
  const auto topo = encoder_topology(EncoderConfig::standard());
  EXPECT_EQ(topo.total_params(), reference_param_count());
  EXPECT_GE(topo.total_params(), 72'250'000);
  EXPECT_LE(topo.total_params(), 97'750'000);
  const auto e = build_encoder(EncoderConfig::standard(), 1, 1);
  EXPECT_EQ(param_count(e), topo.total_params());
  EXPECT_EQ(topo.deep.side, 32);
  EXPECT_EQ(topo.mid.side, 64);
  EXPECT_EQ(topo.shallow.side, 128);
  const auto e2 = build_encoder(EncoderConfig::standard(), 2, 1);
  EXPECT_EQ(param_count(e2), encoder_topology(EncoderConfig::standard(), 6).total_params());
}

TEST(Encoder, SingleLinearLayerCount) {
  nn::ParameterStore<float> p;
  p.add("w", ad::Shape{5, 10, 1}, ad::Array<float>::Zero(50));
  p.add("b", ad::Shape::vec(5), ad::Array<float>::Zero(5));
  EXPECT_EQ(param_count(p), 55);
}

TEST(Encoder, DefaultForwardAt256) {
  const auto e = build_encoder(EncoderConfig::standard(), 1, 3);
  const auto w = encode(e, random_image(256, 3, 4));
  EXPECT_EQ(w.n_codes(), 18);
  EXPECT_EQ(w.dim(), 512);
  EXPECT_TRUE(w.all_finite());
}

TEST(Encoder, ToyShapeDeterminismAndErrors) {
  const auto cfg = EncoderConfig::toy();
  const auto e = build_encoder(cfg, 1, 5);
  const auto x = random_image(32, 3, 6);
  const auto w = encode(e, x);
  EXPECT_EQ(w.n_codes(), 6);
  EXPECT_EQ(w.dim(), 16);
  EXPECT_TRUE(w.all_finite());
  EXPECT_EQ(encode(e, x), w);
  EXPECT_THROW(encode(e, random_image(24, 3, 1)), ValidationError);
  const auto e2 = build_encoder(cfg, 2, 5);
  EXPECT_THROW(encode(e2, x), UsageError);
  EXPECT_THROW(encode_refine(e, x, x, w), UsageError);
  EXPECT_THROW(encode_refine(e2, x, random_image(16, 3, 1), w), ValidationError);
  EXPECT_THROW(build_encoder(cfg, 0, 1), Error);
}

TEST(Encoder, PoolTooLargeNamesResolution) {
  auto cfg = EncoderConfig::toy();
  cfg.pool_sizes = {5, 2, 2};
  try {
    build_encoder(cfg, 1, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("40"), std::string::npos) << e.what();
  }
}

TEST(Encoder, RefinementStartsAsIdentity) {
  const auto cfg = EncoderConfig::toy();
  const auto e2 = build_encoder(cfg, 2, 9);
  EXPECT_EQ(e2.net().input_channels(), 6);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d;
  LatentCode prev(6, 16);
  for (auto& v : prev.codes().reshaped()) v = d(rng);
  for (int t = 0; t < 5; ++t)
    EXPECT_EQ(encode_refine(e2, random_image(32, 3, t), random_image(32, 3, 100 + t), prev), prev);
}

TEST(Encoder, RefinementAddsResidual) {
  const auto cfg = EncoderConfig::toy();
  auto e2 = build_encoder(cfg, 2, 9);
  for (auto& p : e2.net().params().entries())
    if (p.name == "head.deep.bias" || p.name == "head.mid.bias" || p.name == "head.shallow.bias") p.var.value().setConstant(0.25f);
  const LatentCode prev = LatentCode::Constant(6, 16, -1.0f);
  const auto x = random_image(32, 3, 1);
  EXPECT_EQ(encode_refine(e2, x, x, prev), LatentCode::Constant(6, 16, -0.75f));
}

TEST(Encoder, HeadPartition) {
  const auto cfg = EncoderConfig::toy();
  const auto e = build_encoder(cfg, 1, 11);
  const auto& net = e.net();
  const auto img = ad::Var<float>::constant(ad::Shape{3, 32, 32}, random_image(32, 3, 12).values());
  const auto base_taps = net.features(img);
  const Eigen::ArrayXf base = net.heads(base_taps).value();
  const int dim = cfg.dim;
  const std::array<std::pair<int, int>, 3> ranges{{{0, 3}, {3, 5}, {5, 6}}};
  for (int which = 0; which < 3; ++which) {
    auto taps = base_taps;
    auto& tap = which == 0 ? taps.deep : which == 1 ? taps.mid : taps.shallow;
    tap = ad::Var<float>::constant(tap.shape(), tap.value() + 0.5f);
    const Eigen::ArrayXf out = net.heads(taps).value();
    for (int c = 0; c < 6; ++c) {
      const bool inside = c >= ranges[which].first && c < ranges[which].second;
      const float diff = (out.segment(c * dim, dim) - base.segment(c * dim, dim)).abs().maxCoeff();
      if (inside)
        EXPECT_GT(diff, 0.0f) << "tap " << which << " code " << c;
      else
        EXPECT_EQ(diff, 0.0f) << "tap " << which << " code " << c;
    }
  }
}

TEST(Encoder, BackboneGradientMatchesFiniteDifferences) {
  const auto cfg = EncoderConfig::toy();
  const auto e = build_encoder(cfg, 1, 13);
  const auto x = random_image(32, 3, 14);

  auto net64 = e.net().cast<double>();
  const auto img64 = ad::Var<double>::constant(ad::Shape{3, 32, 32}, x.values().cast<double>());
  for (const char* name : {"stem.conv", "body1.0.conv1", "body2.0.se.fc1"}) {
    auto it = std::find_if(net64.params().entries().begin(), net64.params().entries().end(),
                           [&](const auto& p) { return p.name == name; });
    ASSERT_NE(it, net64.params().entries().end()) << name;
    auto leaf = it->var;
    auto f = [&] { return ad::sum(net64.forward(img64)); };
    EXPECT_LT(fdcheck::max_rel_error<double>(leaf, f, 1e-6, 12), 1e-4) << name;
  }

  // f32 autodiff against double-precision central differences on the same weights.
  auto net32 = e.net().cast<float>();
  const auto img32 = ad::Var<float>::constant(ad::Shape{3, 32, 32}, x.values());
  auto leaf32 = net32.params().entries().front().var;
  auto out32 = ad::sum(net32.forward(img32));
  ad::backward(out32);
  auto leaf64 = net64.params().entries().front().var;
  double worst = 0;
  for (Eigen::Index i = 0; i < leaf32.size(); i += leaf32.size() / 12) {
    const double keep = leaf64.value()[i], h = 1e-6;
    leaf64.value()[i] = keep + h;
    const double up = ad::sum(net64.forward(img64)).item();
    leaf64.value()[i] = keep - h;
    const double dn = ad::sum(net64.forward(img64)).item();
    leaf64.value()[i] = keep;
    const double num = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(num - leaf32.grad()[i]) / std::max({std::abs(num), 1e-3}));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Encoder, CheckpointRoundTrip) {
  const auto dir = fs::temp_directory_path() / "wplus_enc_ckpt";
  fs::remove_all(dir);
  const auto e = build_encoder(EncoderConfig::toy(), 2, 21);
  CheckpointInfo info{EncoderConfig::toy(), 2, 7, LossWeights{}, 1};
  save_checkpoint(e, info, dir);
  CheckpointInfo back_info;
  const auto back = load_checkpoint(dir, &back_info);
  EXPECT_EQ(back->stage_index(), 2);
  EXPECT_EQ(back_info.epoch, 7);
  const auto x = random_image(32, 3, 1);
  const auto prev = LatentCode::Constant(6, 16, 0.5f);
  EXPECT_EQ(encode_refine(*back, x, x, prev), encode_refine(e, x, x, prev));
  EXPECT_THROW(load_checkpoint(dir / "missing"), Error);
}
