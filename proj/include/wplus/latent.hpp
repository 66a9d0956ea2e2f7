#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace wplus {

/// On-disk precision of a latent; in memory codes are always f32.
enum class Dtype : std::uint8_t { F32 = 0, F16 = 1 };

using LatentMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A W+ code: n_codes style vectors of `dim` entries each, one row per code.
class LatentCode {
 public:
  LatentCode() = default;
  LatentCode(int n_codes, int dim);  // zero-filled
  explicit LatentCode(LatentMatrix codes);

  static LatentCode Zero(int n_codes, int dim) { return LatentCode(n_codes, dim); }
  static LatentCode Constant(int n_codes, int dim, float value);

  int n_codes() const { return static_cast<int>(codes_.rows()); }
  int dim() const { return static_cast<int>(codes_.cols()); }
  Eigen::Index size() const { return codes_.size(); }

  const LatentMatrix& codes() const { return codes_; }
  LatentMatrix& codes() { return codes_; }

  auto code(int i) const { return codes_.row(i); }
  auto code(int i) { return codes_.row(i); }

  float* data() { return codes_.data(); }
  const float* data() const { return codes_.data(); }

  /// Flat row-major view (code 0 first).
  Eigen::Map<const Eigen::VectorXf> flat() const { return {codes_.data(), codes_.size()}; }
  Eigen::Map<Eigen::VectorXf> flat() { return {codes_.data(), codes_.size()}; }

  bool all_finite() const { return codes_.allFinite(); }
  bool same_shape(const LatentCode& other) const {
    return n_codes() == other.n_codes() && dim() == other.dim();
  }

  /// Throws ValidationError when any invariant is broken.
  void validate() const;

  /// Rounds every entry through IEEE half precision.
  LatentCode quantized_f16() const;

  friend bool operator==(const LatentCode& a, const LatentCode& b) {
    return a.same_shape(b) && a.codes_ == b.codes_;
  }

 private:
  LatentMatrix codes_;
};

LatentCode operator+(const LatentCode& a, const LatentCode& b);
LatentCode operator-(const LatentCode& a, const LatentCode& b);

}  // namespace wplus
