#pragma once

#include <vector>

#include "wplus/ad/var.hpp"

namespace wplus::ad {

// Element-wise (identical shapes).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);

// Per-channel broadcast of a length-C vector over a (C, H, W) tensor.
template <typename T> Var<T> channel_mul(const Var<T>& x, const Var<T>& s);
template <typename T> Var<T> channel_add(const Var<T>& x, const Var<T>& b);

/// Cross-correlation with zero padding. `weight` has shape (Cout, Cin*k*k, 1),
/// laid out as PyTorch's (Cout, Cin, k, k).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int kernel, int stride, int pad);

/// y = W x + b with W of shape (out, in, 1); `bias` may be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T> Var<T> relu(const Var<T>& x);
/// Per-channel learnable negative slope.
template <typename T> Var<T> prelu(const Var<T>& x, const Var<T>& slope);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
/// (x + eps)^(-1/2)
template <typename T> Var<T> rsqrt(const Var<T>& x, T eps);
/// Clamps into [lo, hi]; gradient passes only strictly inside.
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);
/// sqrt(x); the derivative at exactly 0 is taken as 0.
template <typename T> Var<T> sqrt(const Var<T>& x);

/// Adaptive average pooling to out x out (PyTorch window convention).
template <typename T> Var<T> adaptive_avg_pool(const Var<T>& x, int out);
/// (C, H, W) -> (C) spatial mean.
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
/// Keeps every `stride`-th pixel (1x1 max pool with stride).
template <typename T> Var<T> subsample(const Var<T>& x, int stride);
/// Nearest-neighbour 2x upsample.
template <typename T> Var<T> upsample2x(const Var<T>& x);
/// 2x2 mean pooling, sides must be even.
template <typename T> Var<T> avg_pool2x(const Var<T>& x);

template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
/// Concatenates flattened values into one vector.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> slice(const Var<T>& x, Eigen::Index offset, Eigen::Index count);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> sum_squares(const Var<T>& x);

/// Scales each pixel's channel vector to unit length: x / sqrt(sum_c x^2 + eps).
template <typename T> Var<T> channel_normalize(const Var<T>& x, T eps);

/// Cosine similarity of flattened a and b; 0 (and zero gradient) if either norm is 0.
template <typename T> Var<T> cosine(const Var<T>& a, const Var<T>& b);

/// For weight (Cout, Cin*kk): out[o, i] = sum_k weight[o, i, k]^2, shape (Cout, Cin, 1).
template <typename T> Var<T> kernel_energy(const Var<T>& weight, int cin);

}  // namespace wplus::ad
