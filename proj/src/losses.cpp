#include "wplus/losses.hpp"

#include <algorithm>
#include <fstream>

#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"
#include "wplus/log.hpp"
#include "wplus/tensor_archive.hpp"

namespace wplus {

std::string to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::Perceptual: return "perceptual";
    case ExtractorKind::Identity: return "identity";
    case ExtractorKind::Parsing: return "parsing";
  }
  return "?";
}

ExtractorKind extractor_kind_from(const std::string& s) {
  if (s == "perceptual") return ExtractorKind::Perceptual;
  if (s == "identity") return ExtractorKind::Identity;
  if (s == "parsing") return ExtractorKind::Parsing;
  throw ConfigError("unknown extractor kind '" + s + "'");
}

template <typename T>
ConvStackExtractor<T>::ConvStackExtractor(std::string name, ExtractorKind kind, std::vector<Layer> layers,
                                          std::vector<int> taps, Activation act, FeatureNormalization norm,
                                          int input_resolution)
    : name_(std::move(name)),
      kind_(kind),
      layers_(std::move(layers)),
      taps_(std::move(taps)),
      act_(act),
      norm_(norm),
      input_resolution_(input_resolution) {
  for (int t : taps_)
    if (t < 0 || t >= static_cast<int>(layers_.size())) throw ValidationError("extractor tap index out of range");
  if (!std::is_sorted(taps_.begin(), taps_.end())) throw ValidationError("extractor taps must be increasing");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string p = "conv" + std::to_string(i);
    weights_.push_back(params_.add(p + ".weight", ad::Shape{l.out, l.in * 9, 1}, ad::Array<T>::Zero(Eigen::Index(l.out) * l.in * 9)));
    biases_.push_back(params_.add(p + ".bias", ad::Shape::vec(l.out), ad::Array<T>::Zero(l.out)));
  }
  params_.set_requires_grad(false);
}

template <typename T>
std::vector<ad::Var<T>> ConvStackExtractor<T>::extract(const ad::Var<T>& image) const {
  ad::Var<T> x = image;
  if (input_resolution_ > 0) {
    while (x.shape().h > input_resolution_ && x.shape().h % 2 == 0 && x.shape().w % 2 == 0) x = ad::avg_pool2x(x);
    if (x.shape().h != input_resolution_)
      throw ValidationError(name_ + ": cannot bring a " + std::to_string(image.shape().h) + "px image to " +
                            std::to_string(input_resolution_) + "px");
  }
  std::vector<ad::Var<T>> out;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < layers_.size() && next_tap < taps_.size(); ++i) {
    x = ad::channel_add(ad::conv2d(x, weights_[i], 3, 1, 1), biases_[i]);
    x = act_ == Activation::Tanh ? ad::tanh(x) : ad::relu(x);
    if (static_cast<int>(i) == taps_[next_tap]) {
      out.push_back(x);
      ++next_tap;
    }
    if (layers_[i].downsample_after && x.shape().h % 2 == 0 && x.shape().w % 2 == 0 && x.shape().h > 1)
      x = ad::avg_pool2x(x);
  }
  return out;
}

template <typename T>
ad::Array<T> ConvStackExtractor<T>::level_weights(int level) const {
  if (level < static_cast<int>(lin_.size())) return lin_[level];
  return {};
}

template class ConvStackExtractor<float>;
template class ConvStackExtractor<double>;

template <typename T>
std::shared_ptr<ConvStackExtractor<T>> make_toy_extractor(ExtractorKind kind, std::uint64_t seed, int levels,
                                                          int channels) {
  if (levels < 1 || channels < 1) throw ValidationError("toy extractor needs levels >= 1 and channels >= 1");
  using Ext = ConvStackExtractor<T>;
  std::vector<typename Ext::Layer> layers;
  std::vector<int> taps;
  for (int i = 0; i < levels; ++i) {
    layers.push_back({i == 0 ? 3 : channels, channels, true});
    taps.push_back(i);
  }
  auto ext = std::make_shared<Ext>("toy-" + to_string(kind), kind, layers, taps, Ext::Activation::Tanh,
                                   FeatureNormalization::None, 0);
  std::mt19937_64 rng(seed);
  for (auto& e : ext->params().entries()) {
    if (e.name.ends_with(".bias")) {
      e.var.value() = nn::normal_init<T>(e.var.size(), 0.1, rng);
    } else {
      e.var.value() = nn::normal_init<T>(e.var.size(), 1.0 / std::sqrt(double(e.var.shape().h)), rng);
    }
  }
  return ext;
}

template std::shared_ptr<ConvStackExtractor<float>> make_toy_extractor<float>(ExtractorKind, std::uint64_t, int, int);
template std::shared_ptr<ConvStackExtractor<double>> make_toy_extractor<double>(ExtractorKind, std::uint64_t, int, int);

ExtractorManifest ExtractorManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("extractor manifest not found: " + path.string());
  ExtractorManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.name = j.at("name").get<std::string>();
    m.kind = extractor_kind_from(j.at("kind").get<std::string>());
    m.level_taps = j.at("level_taps").get<std::vector<int>>();
    m.input_resolution = j.value("input_resolution", 0);
    const std::string norm = j.value("normalization", "none");
    if (norm == "none") {
      m.normalization = FeatureNormalization::None;
    } else if (norm == "unit_channel" || norm == "lpips") {
      m.normalization = FeatureNormalization::UnitChannel;
    } else {
      throw AssetError("unknown extractor normalization '" + norm + "'");
    }
    m.asset = j.at("asset").get<std::string>();
    m.downsample_after = j.value("downsample_after", std::vector<int>{});
    m.activation = j.value("activation", std::string("relu"));
  } catch (const nlohmann::json::exception& e) {
    throw AssetError("extractor manifest " + path.string() + " is malformed: " + e.what());
  } catch (const ConfigError& e) {
    throw AssetError(e.what());
  }
  return m;
}

std::shared_ptr<ConvStackExtractor<float>> load_extractor(const std::filesystem::path& manifest_path) {
  const ExtractorManifest m = ExtractorManifest::load(manifest_path);
  const auto asset = manifest_path.parent_path() / m.asset;
  if (!std::filesystem::exists(asset)) throw AssetError("extractor asset not found: " + asset.string());
  using Ext = ConvStackExtractor<float>;
  try {
    const TensorArchive ar = TensorArchive::load(asset);
    std::vector<Ext::Layer> layers;
    for (int i = 0;; ++i) {
      const std::string key = "conv" + std::to_string(i) + ".weight";
      if (!ar.contains(key)) break;
      const auto& d = ar.get(key).dims;
      if (d[1] % 9 != 0) throw AssetError(key + " is not a 3x3 kernel");
      const bool down = std::find(m.downsample_after.begin(), m.downsample_after.end(), i) != m.downsample_after.end();
      layers.push_back({d[1] / 9, d[0], down});
      if (i > 0 && layers[i].in != layers[i - 1].out) throw AssetError(key + " does not chain with the previous layer");
    }
    if (layers.empty()) throw AssetError("extractor asset has no conv layers");
    const auto act = m.activation == "tanh" ? Ext::Activation::Tanh : Ext::Activation::Relu;
    auto ext = std::make_shared<Ext>(m.name, m.kind, layers, m.level_taps, act, m.normalization, m.input_resolution);
    ext->params().load_archive(ar);
    std::vector<ad::Array<float>> lin;
    for (std::size_t k = 0; k < m.level_taps.size(); ++k) {
      const std::string key = "lin" + std::to_string(k);
      if (!ar.contains(key)) break;
      lin.push_back(ar.get(key).values);
    }
    ext->set_level_weights(std::move(lin));
    return ext;
  } catch (const AssetError&) {
    throw;
  } catch (const Error& e) {
    throw AssetError("extractor asset " + asset.string() + ": " + e.what());
  }
}

double combine_terms(const LossTerms& t, const LossWeights& w) {
  w.validate();
  return w.pixel * t.pixel + w.perceptual * t.perceptual + w.identity * t.identity + w.parsing * t.parsing;
}

template <typename T>
ad::Var<T> pixel_loss(const ad::Var<T>& x, const ad::Var<T>& y, PixelNorm norm) {
  if (!(x.shape() == y.shape())) throw ValidationError("pixel_loss: images differ in shape");
  const auto diff = ad::sub(x, y);
  return norm == PixelNorm::Rms ? ad::sqrt(ad::mean(ad::square(diff))) : ad::sqrt(ad::sum_squares(diff));
}

template <typename T>
ad::Var<T> perceptual_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& f) {
  if (f.kind() != ExtractorKind::Perceptual) throw ValidationError("perceptual_loss needs a perceptual extractor");
  if (!(x.shape() == y.shape())) throw ValidationError("perceptual_loss: images differ in shape");
  const auto fx = f.extract(x);
  const auto fy = f.extract(y);
  std::vector<ad::Var<T>> per_level;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    if (f.normalization() == FeatureNormalization::None) {
      per_level.push_back(ad::sqrt(ad::mean(ad::square(ad::sub(fx[i], fy[i])))));
    } else {
      const T eps = T(1e-10);
      ad::Var<T> d = ad::square(ad::sub(ad::channel_normalize(fx[i], eps), ad::channel_normalize(fy[i], eps)));
      const ad::Array<T> w = f.level_weights(static_cast<int>(i));
      if (w.size() > 0) d = ad::channel_mul(d, ad::Var<T>::constant(ad::Shape::vec(w.size()), w));
      per_level.push_back(ad::scale(ad::sum(d), T(1) / T(d.shape().plane())));
    }
  }
  return ad::sum(ad::concat(per_level));
}

template <typename T>
ad::Var<T> multilayer_cosine_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& f,
                                  int* degenerate_levels) {
  if (!(x.shape() == y.shape())) throw ValidationError("multi-layer loss: images differ in shape");
  const auto fx = f.extract(x);
  const auto fy = f.extract(y);
  std::vector<ad::Var<T>> cosines;
  int degenerate = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    if (!(fx[i].value().matrix().norm() > T(0)) || !(fy[i].value().matrix().norm() > T(0))) ++degenerate;
    cosines.push_back(ad::cosine(fx[i], fy[i]));
  }
  if (degenerate > 0) log::warn(f.name() + ": " + std::to_string(degenerate) + " level(s) with zero-norm features, cosine taken as 0");
  if (degenerate_levels) *degenerate_levels += degenerate;
  return ad::add_scalar(ad::scale(ad::sum(ad::concat(cosines)), T(-1)), T(fx.size()));
}

namespace {

template <typename T>
void require_multilayer(const FeatureExtractor<T>& f, ExtractorKind kind) {
  if (f.kind() != kind) throw ValidationError("expected a " + to_string(kind) + " extractor, got " + to_string(f.kind()));
  if (f.levels() != kMultiLayerLevels)
    throw ValidationError(to_string(kind) + " extractor must expose exactly 5 levels, has " + std::to_string(f.levels()));
}

}  // namespace

template <typename T>
ad::Var<T> multilayer_id_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& r,
                              int* degenerate_levels) {
  require_multilayer(r, ExtractorKind::Identity);
  return multilayer_cosine_loss(x, y, r, degenerate_levels);
}

template <typename T>
ad::Var<T> multilayer_parsing_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& p,
                                   int* degenerate_levels) {
  require_multilayer(p, ExtractorKind::Parsing);
  return multilayer_cosine_loss(x, y, p, degenerate_levels);
}

template <typename T>
TotalLoss<T> total_loss(const ad::Var<T>& x, const ad::Var<T>& y, const LossWeights& weights,
                        const LossExtractors<T>& ex, PixelNorm norm) {
  weights.validate();
  TotalLoss<T> out;
  std::vector<ad::Var<T>> weighted;
  auto take = [&](double w, const ad::Var<T>& term, double& slot) {
    slot = static_cast<double>(term.item());
    if (w > 0) weighted.push_back(ad::scale(term, T(w)));
  };
  auto need = [](double w, const auto& ptr, const char* what) {
    if (w > 0 && !ptr) throw ValidationError(std::string("total_loss: weight on ") + what + " term but no extractor");
    return ptr != nullptr;
  };
  take(weights.pixel, pixel_loss(x, y, norm), out.terms.pixel);
  if (need(weights.perceptual, ex.perceptual, "perceptual"))
    take(weights.perceptual, perceptual_loss(x, y, *ex.perceptual), out.terms.perceptual);
  if (need(weights.identity, ex.identity, "identity"))
    take(weights.identity, multilayer_id_loss(x, y, *ex.identity, &out.terms.degenerate_levels), out.terms.identity);
  if (need(weights.parsing, ex.parsing, "parsing"))
    take(weights.parsing, multilayer_parsing_loss(x, y, *ex.parsing, &out.terms.degenerate_levels), out.terms.parsing);
  if (weighted.empty()) {
    out.total = ad::Var<T>::constant(ad::Shape{}, T(0));
  } else if (weighted.size() == 1) {
    out.total = weighted.front();
  } else {
    out.total = ad::sum(ad::concat(weighted));
  }
  return out;
}

#define WPLUS_LOSSES(T)                                                                                          \
  template ad::Var<T> pixel_loss<T>(const ad::Var<T>&, const ad::Var<T>&, PixelNorm);                           \
  template ad::Var<T> perceptual_loss<T>(const ad::Var<T>&, const ad::Var<T>&, const FeatureExtractor<T>&);     \
  template ad::Var<T> multilayer_cosine_loss<T>(const ad::Var<T>&, const ad::Var<T>&, const FeatureExtractor<T>&, \
                                                int*);                                                          \
  template ad::Var<T> multilayer_id_loss<T>(const ad::Var<T>&, const ad::Var<T>&, const FeatureExtractor<T>&,   \
                                            int*);                                                              \
  template ad::Var<T> multilayer_parsing_loss<T>(const ad::Var<T>&, const ad::Var<T>&,                          \
                                                 const FeatureExtractor<T>&, int*);                             \
  template TotalLoss<T> total_loss<T>(const ad::Var<T>&, const ad::Var<T>&, const LossWeights&,                 \
                                      const LossExtractors<T>&, PixelNorm);

WPLUS_LOSSES(float)
WPLUS_LOSSES(double)

ad::Var<float> as_var(const ImageTensor& img) {
  return ad::Var<float>::constant(ad::Shape{img.channels(), img.height(), img.width()}, img.values());
}

double pixel_loss(const ImageTensor& x, const ImageTensor& y, PixelNorm norm) {
  if (!x.same_shape(y)) throw ValidationError("pixel_loss: images differ in shape");
  ad::NoGradGuard g;
  return pixel_loss<float>(as_var(x), as_var(y), norm).item();
}

double perceptual_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& f) {
  ad::NoGradGuard g;
  return perceptual_loss<float>(as_var(x), as_var(y), f).item();
}

double multilayer_id_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& r) {
  ad::NoGradGuard g;
  return multilayer_id_loss<float>(as_var(x), as_var(y), r).item();
}

double multilayer_parsing_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& p) {
  ad::NoGradGuard g;
  return multilayer_parsing_loss<float>(as_var(x), as_var(y), p).item();
}

std::pair<double, LossTerms> total_loss(const ImageTensor& x, const ImageTensor& y, const LossWeights& weights,
                                        const LossExtractors<float>& extractors) {
  ad::NoGradGuard g;
  const auto r = total_loss<float>(as_var(x), as_var(y), weights, extractors);
  return {combine_terms(r.terms, weights), r.terms};
}

}  // namespace wplus
