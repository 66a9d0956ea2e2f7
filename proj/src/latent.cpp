#include "wplus/latent.hpp"

#include <Eigen/Core>

#include "wplus/error.hpp"

namespace wplus {

LatentCode::LatentCode(int n_codes, int dim) {
  if (n_codes < 1 || dim < 1) throw ValidationError("latent code needs n_codes >= 1 and dim >= 1");
  codes_ = LatentMatrix::Zero(n_codes, dim);
}

LatentCode::LatentCode(LatentMatrix codes) : codes_(std::move(codes)) {}

LatentCode LatentCode::Constant(int n_codes, int dim, float value) {
  LatentCode c(n_codes, dim);
  c.codes_.setConstant(value);
  return c;
}

void LatentCode::validate() const {
  if (codes_.rows() < 1 || codes_.cols() < 1) throw ValidationError("latent code is empty");
  if (codes_.rows() > 0xFFFF || codes_.cols() > 0xFFFF) throw ValidationError("latent code dimensions exceed 65535");
  if (!codes_.allFinite()) throw ValidationError("latent code contains non-finite values");
}

LatentCode LatentCode::quantized_f16() const {
  LatentMatrix q = codes_.cast<Eigen::half>().cast<float>();
  return LatentCode(std::move(q));
}

LatentCode operator+(const LatentCode& a, const LatentCode& b) {
  if (!a.same_shape(b)) throw ValidationError("latent shapes differ");
  return LatentCode(LatentMatrix(a.codes() + b.codes()));
}

LatentCode operator-(const LatentCode& a, const LatentCode& b) {
  if (!a.same_shape(b)) throw ValidationError("latent shapes differ");
  return LatentCode(LatentMatrix(a.codes() - b.codes()));
}

}  // namespace wplus
