#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "wplus/image.hpp"
#include "wplus/latent.hpp"

namespace wplus {

/// A latent-space direction: one dim-vector shared by every code, or one per code.
struct SemanticDirection {
  std::string name;
  int dim = 0;
  bool per_code = false;
  LatentMatrix values;  // 1 x dim, or n_codes x dim when per_code
  std::pair<double, double> alpha_range{-3.0, 3.0};

  void validate() const;
  static SemanticDirection load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

void to_json(nlohmann::json& j, const SemanticDirection& d);
void from_json(const nlohmann::json& j, SemanticDirection& d);

/// w + alpha * d, broadcast over codes for a single-vector direction.
LatentCode manipulate(const LatentCode& w, const SemanticDirection& d, double alpha);

enum class InterpolationMode { Strict, Permissive };

/// lam * wb + (1 - lam) * wa. Strict mode rejects lam outside [0, 1]; permissive
/// mode extrapolates with a warning.
LatentCode interpolate(const LatentCode& wa, const LatentCode& wb, double lam,
                       InterpolationMode mode = InterpolationMode::Strict);

/// Number of leading codes style_mix keeps by default: n_codes - 11, floored at 0.
int default_keep(int n_codes);

/// First `keep` codes from content, the rest from style.
LatentCode style_mix(const LatentCode& content, const LatentCode& style, std::optional<int> keep = std::nullopt);

/// Axis-aligned box in fractions of the image size; [x0, x1) x [y0, y1).
struct FracBox {
  double x0 = 0.2, y0 = 0.2, x1 = 0.8, y1 = 0.8;
  static FracBox central(double fraction);
};

/// target with the box region copied from source.
ImageTensor paste_center(const ImageTensor& source, const ImageTensor& target, const FracBox& box = {});

}  // namespace wplus
