#include "wplus/editing.hpp"

#include <cmath>
#include <fstream>

#include "wplus/error.hpp"
#include "wplus/log.hpp"

namespace wplus {

void SemanticDirection::validate() const {
  if (dim < 1) throw ValidationError("direction '" + name + "' has dim < 1");
  if (values.cols() != dim) throw ValidationError("direction '" + name + "' vectors do not have dim entries");
  if (!per_code && values.rows() != 1) throw ValidationError("direction '" + name + "' must hold exactly one vector");
  if (per_code && values.rows() < 1) throw ValidationError("direction '" + name + "' has no per-code vectors");
  if (!values.allFinite()) throw ValidationError("direction '" + name + "' has non-finite entries");
  if (!(alpha_range.first <= alpha_range.second)) throw ValidationError("direction '" + name + "' alpha range is empty");
}

void to_json(nlohmann::json& j, const SemanticDirection& d) {
  nlohmann::json vals;
  if (d.per_code) {
    vals = nlohmann::json::array();
    for (Eigen::Index r = 0; r < d.values.rows(); ++r) {
      std::vector<float> row(d.values.row(r).begin(), d.values.row(r).end());
      vals.push_back(row);
    }
  } else {
    vals = std::vector<float>(d.values.row(0).begin(), d.values.row(0).end());
  }
  j = {{"name", d.name},
       {"dim", d.dim},
       {"per_code", d.per_code},
       {"values", vals},
       {"alpha_range", {d.alpha_range.first, d.alpha_range.second}}};
}

void from_json(const nlohmann::json& j, SemanticDirection& d) {
  d.name = j.at("name").get<std::string>();
  d.dim = j.at("dim").get<int>();
  d.per_code = j.value("per_code", false);
  std::vector<std::vector<float>> rows;
  if (d.per_code) {
    rows = j.at("values").get<std::vector<std::vector<float>>>();
  } else {
    rows.push_back(j.at("values").get<std::vector<float>>());
  }
  d.values.resize(static_cast<Eigen::Index>(rows.size()), d.dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != d.dim)
      throw ValidationError("direction '" + d.name + "' row " + std::to_string(r) + " has " +
                            std::to_string(rows[r].size()) + " entries, expected " + std::to_string(d.dim));
    for (int c = 0; c < d.dim; ++c) d.values(static_cast<Eigen::Index>(r), c) = rows[r][c];
  }
  if (j.contains("alpha_range")) {
    const auto ar = j.at("alpha_range").get<std::vector<double>>();
    if (ar.size() != 2) throw ValidationError("alpha_range must have two entries");
    d.alpha_range = {ar[0], ar[1]};
  }
}

SemanticDirection SemanticDirection::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("direction file not found: " + path.string());
  SemanticDirection d;
  try {
    d = nlohmann::json::parse(in).get<SemanticDirection>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("direction file " + path.string() + " is malformed: " + e.what());
  }
  d.validate();
  return d;
}

void SemanticDirection::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(*this).dump(2) << '\n';
}

LatentCode manipulate(const LatentCode& w, const SemanticDirection& d, double alpha) {
  d.validate();
  if (d.dim != w.dim())
    throw ValidationError("direction dim " + std::to_string(d.dim) + " does not match latent dim " +
                          std::to_string(w.dim()));
  if (d.per_code && d.values.rows() != w.n_codes())
    throw ValidationError("direction has " + std::to_string(d.values.rows()) + " codes, latent has " +
                          std::to_string(w.n_codes()));
  if (!std::isfinite(alpha)) throw ValidationError("alpha must be finite");
  LatentCode out = w;
  const float a = static_cast<float>(alpha);
  if (d.per_code) {
    out.codes() += a * d.values;
  } else {
    out.codes().rowwise() += a * d.values.row(0);
  }
  return out;
}

LatentCode interpolate(const LatentCode& wa, const LatentCode& wb, double lam, InterpolationMode mode) {
  if (!wa.same_shape(wb)) throw ValidationError("interpolate: latents differ in shape");
  if (!std::isfinite(lam)) throw ValidationError("interpolate: lambda must be finite");
  if (lam < 0 || lam > 1) {
    if (mode == InterpolationMode::Strict)
      throw ValidationError("interpolate: lambda " + std::to_string(lam) + " outside [0, 1]");
    log::warn("interpolate: extrapolating with lambda " + std::to_string(lam));
  }
  const float fb = static_cast<float>(lam), fa = static_cast<float>(1.0 - lam);
  LatentCode out = wa;
  out.codes() = fa * wa.codes() + fb * wb.codes();
  return out;
}

int default_keep(int n_codes) { return std::max(0, n_codes - 11); }

LatentCode style_mix(const LatentCode& content, const LatentCode& style, std::optional<int> keep) {
  if (!content.same_shape(style)) throw ValidationError("style_mix: latents differ in shape");
  const int k = keep.value_or(default_keep(content.n_codes()));
  if (k < 0 || k > content.n_codes())
    throw ValidationError("style_mix: keep " + std::to_string(k) + " outside [0, " +
                          std::to_string(content.n_codes()) + "]");
  LatentCode out = style;
  out.codes().topRows(k) = content.codes().topRows(k);
  return out;
}

FracBox FracBox::central(double fraction) {
  const double m = (1.0 - fraction) / 2.0;
  return {m, m, 1.0 - m, 1.0 - m};
}

ImageTensor paste_center(const ImageTensor& source, const ImageTensor& target, const FracBox& box) {
  if (!source.same_shape(target)) throw ValidationError("paste_center: images differ in shape");
  for (double v : {box.x0, box.y0, box.x1, box.y1})
    if (!(v >= 0 && v <= 1)) throw ValidationError("paste_center: box must lie within [0, 1]^2");
  const int h = target.height(), w = target.width();
  const int px0 = static_cast<int>(std::lround(box.x0 * w)), px1 = static_cast<int>(std::lround(box.x1 * w));
  const int py0 = static_cast<int>(std::lround(box.y0 * h)), py1 = static_cast<int>(std::lround(box.y1 * h));
  if (px1 <= px0 || py1 <= py0) throw ValidationError("paste_center: box covers no pixels");
  ImageTensor out = target;
  for (int c = 0; c < out.channels(); ++c)
    for (int y = py0; y < py1; ++y)
      for (int x = px0; x < px1; ++x) out.at(c, y, x) = source.at(c, y, x);
  return out;
}

}  // namespace wplus
