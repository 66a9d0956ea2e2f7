#include <gtest/gtest.h>

#include <random>

#include "fd.hpp"
#include "wplus/ad/ops.hpp"

using namespace wplus;
using ad::Array;
using ad::Shape;
using ad::Var;

namespace {

Array<double> randn(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0, sd);
  Array<double> a(n);
  for (auto& v : a) v = d(rng);
  return a;
}

}  // namespace

TEST(Autodiff, ElementwiseChain) {
  std::mt19937_64 rng(1);
  auto x = Var<double>::parameter(Shape{2, 3, 3}, randn(18, rng));
  const auto b = Var<double>::constant(Shape{2, 3, 3}, randn(18, rng));
  auto f = [&] {
    auto y = ad::mul(ad::tanh(x), ad::sigmoid(ad::add(x, b)));
    y = ad::leaky_relu(ad::sub(y, ad::scale(b, 0.3)), 0.2);
    return ad::add(ad::sum_squares(y), ad::mean(ad::sqrt(ad::add_scalar(ad::square(x), 1.0))));
  };
  EXPECT_LT(fdcheck::max_rel_error<double>(x, f, 1e-6), 1e-6);
}

TEST(Autodiff, ConvLinearPooling) {
  std::mt19937_64 rng(2);
  auto x = Var<double>::parameter(Shape{3, 8, 8}, randn(192, rng));
  auto w = Var<double>::parameter(Shape{4, 27, 1}, randn(108, rng, 0.3));
  auto s = Var<double>::parameter(Shape::vec(3), randn(3, rng));
  auto lw = Var<double>::parameter(Shape{5, 16, 1}, randn(80, rng, 0.3));
  auto lb = Var<double>::parameter(Shape::vec(5), randn(5, rng));
  auto f = [&] {
    auto y = ad::conv2d(ad::channel_mul(x, s), w, 3, 2, 1);  // 4x4x4
    y = ad::upsample2x(ad::adaptive_avg_pool(y, 2));
    y = ad::avg_pool2x(ad::prelu(y, Var<double>::constant(Shape::vec(4), 0.25)));
    auto z = ad::linear(ad::reshape(y, Shape::vec(16)), lw, lb);
    return ad::sum(ad::square(ad::tanh(z)));
  };
  EXPECT_LT(fdcheck::max_rel_error<double>(x, f, 1e-6), 1e-6);
  EXPECT_LT(fdcheck::max_rel_error<double>(w, f, 1e-6), 1e-6);
  EXPECT_LT(fdcheck::max_rel_error<double>(s, f, 1e-6), 1e-6);
  EXPECT_LT(fdcheck::max_rel_error<double>(lw, f, 1e-6), 1e-6);
  EXPECT_LT(fdcheck::max_rel_error<double>(lb, f, 1e-6), 1e-6);
}

TEST(Autodiff, NormalizeCosineConcat) {
  std::mt19937_64 rng(3);
  auto a = Var<double>::parameter(Shape{3, 4, 4}, randn(48, rng));
  const auto b = Var<double>::constant(Shape{3, 4, 4}, randn(48, rng));
  auto f = [&] {
    auto n = ad::channel_normalize(a, 1e-10);
    auto c = ad::cosine(ad::global_avg_pool(ad::concat_channels(a, b)), ad::global_avg_pool(ad::concat_channels(b, a)));
    auto parts = ad::concat<double>({ad::slice(ad::reshape(n, Shape::vec(48)), 5, 10), c});
    return ad::sum(ad::mul(parts, parts));
  };
  EXPECT_LT(fdcheck::max_rel_error<double>(a, f, 1e-6), 1e-5);
}

TEST(Autodiff, RsqrtClampSubsample) {
  std::mt19937_64 rng(4);
  Array<double> v = randn(32, rng) * 0.4;
  auto x = Var<double>::parameter(Shape{2, 4, 4}, v);
  auto f = [&] {
    auto y = ad::clamp(x, -0.5, 0.5);
    auto r = ad::rsqrt(ad::add_scalar(ad::square(x), 0.5), 1e-8);
    return ad::add(ad::sum(ad::subsample(ad::mul(y, r), 2)), ad::sum(ad::relu(x)));
  };
  EXPECT_LT(fdcheck::max_rel_error<double>(x, f, 1e-7), 1e-5);
}

TEST(Autodiff, SeedAndAccumulation) {
  auto x = Var<double>::parameter(Shape::vec(3), Array<double>::LinSpaced(3, 1, 3));
  auto y = ad::scale(x, 2.0);
  Array<double> seed = Array<double>::Constant(3, 0.5);
  ad::backward(y, &seed);
  EXPECT_TRUE((x.grad() == 1.0).all());
  ad::backward(ad::sum(x));
  EXPECT_TRUE((x.grad() == 2.0).all());
}

TEST(Autodiff, NoGradGuardDetaches) {
  auto x = Var<float>::parameter(Shape::vec(2), Array<float>::Ones(2));
  Var<float> y;
  {
    ad::NoGradGuard guard;
    y = ad::sum(ad::square(x));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(ad::grad_enabled());
}
