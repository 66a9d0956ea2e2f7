#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wplus/ad/var.hpp"
#include "wplus/config.hpp"
#include "wplus/image.hpp"
#include "wplus/nn/params.hpp"

namespace wplus {

enum class ExtractorKind { Perceptual, Identity, Parsing };
/// How a perceptual level compares features: raw RMS difference, or
/// per-pixel unit channel vectors with optional per-channel weights (LPIPS form).
enum class FeatureNormalization { None, UnitChannel };

std::string to_string(ExtractorKind kind);
ExtractorKind extractor_kind_from(const std::string& s);

/// Maps an image to an ordered list of feature levels. Must be deterministic
/// and differentiable in its input.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual ExtractorKind kind() const = 0;
  virtual int levels() const = 0;
  virtual std::vector<ad::Var<T>> extract(const ad::Var<T>& image) const = 0;

  virtual FeatureNormalization normalization() const { return FeatureNormalization::None; }
  /// Per-channel weights of one level in UnitChannel mode; empty means all ones.
  virtual ad::Array<T> level_weights(int /*level*/) const { return {}; }
};

/// Returns the image itself as every level.
template <typename T>
class PassThroughExtractor final : public FeatureExtractor<T> {
 public:
  PassThroughExtractor(ExtractorKind kind, int levels) : kind_(kind), levels_(levels) {}
  std::string name() const override { return "identity-map"; }
  ExtractorKind kind() const override { return kind_; }
  int levels() const override { return levels_; }
  std::vector<ad::Var<T>> extract(const ad::Var<T>& image) const override {
    return std::vector<ad::Var<T>>(levels_, image);
  }

 private:
  ExtractorKind kind_;
  int levels_;
};

/// A stack of 3x3 convolutions with taps after selected layers. Serves both the
/// seeded toy extractors and externally supplied weights.
template <typename T>
class ConvStackExtractor final : public FeatureExtractor<T> {
 public:
  struct Layer {
    int in = 0, out = 0;
    bool downsample_after = false;
  };
  enum class Activation { Relu, Tanh };

  ConvStackExtractor(std::string name, ExtractorKind kind, std::vector<Layer> layers, std::vector<int> taps,
                     Activation act, FeatureNormalization norm, int input_resolution);

  std::string name() const override { return name_; }
  ExtractorKind kind() const override { return kind_; }
  int levels() const override { return static_cast<int>(taps_.size()); }
  std::vector<ad::Var<T>> extract(const ad::Var<T>& image) const override;
  FeatureNormalization normalization() const override { return norm_; }
  ad::Array<T> level_weights(int level) const override;

  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }
  void set_level_weights(std::vector<ad::Array<T>> w) { lin_ = std::move(w); }

 private:
  std::string name_;
  ExtractorKind kind_;
  std::vector<Layer> layers_;
  std::vector<int> taps_;
  Activation act_;
  FeatureNormalization norm_;
  int input_resolution_;
  nn::ParameterStore<T> params_;
  std::vector<ad::Var<T>> weights_, biases_;
  std::vector<ad::Array<T>> lin_;
};

extern template class ConvStackExtractor<float>;
extern template class ConvStackExtractor<double>;

/// Seeded random conv stack with `levels` taps and tanh activations, halving the
/// resolution after each tap while the side stays even.
template <typename T>
std::shared_ptr<ConvStackExtractor<T>> make_toy_extractor(ExtractorKind kind, std::uint64_t seed, int levels = 5,
                                                          int channels = 8);

/// Manifest of an external extractor asset:
/// {name, kind, level_taps, input_resolution, normalization, asset, downsample_after, activation}.
struct ExtractorManifest {
  std::string name;
  ExtractorKind kind = ExtractorKind::Perceptual;
  std::vector<int> level_taps;
  int input_resolution = 0;  // 0: use the image as is
  FeatureNormalization normalization = FeatureNormalization::None;
  std::string asset;
  std::vector<int> downsample_after;
  std::string activation = "relu";

  static ExtractorManifest load(const std::filesystem::path& path);
};

/// Loads a conv-stack extractor; layer shapes come from `conv{i}.weight` tensors
/// and optional LPIPS weights from `lin{k}`. Throws AssetError on any mismatch.
std::shared_ptr<ConvStackExtractor<float>> load_extractor(const std::filesystem::path& manifest_path);

enum class PixelNorm { Rms, Raw };

template <typename T>
struct LossExtractors {
  std::shared_ptr<const FeatureExtractor<T>> perceptual;
  std::shared_ptr<const FeatureExtractor<T>> identity;
  std::shared_ptr<const FeatureExtractor<T>> parsing;
};

struct LossTerms {
  double pixel = 0;
  double perceptual = 0;
  double identity = 0;
  double parsing = 0;
  int degenerate_levels = 0;  // zero-norm features scored as cos = 0
};

/// Weighted sum of already computed terms. Validates the weights.
double combine_terms(const LossTerms& terms, const LossWeights& weights);

template <typename T>
struct TotalLoss {
  ad::Var<T> total;
  LossTerms terms;
};

// Differentiable forms over (C, H, W) nodes.
template <typename T>
ad::Var<T> pixel_loss(const ad::Var<T>& x, const ad::Var<T>& y, PixelNorm norm = PixelNorm::Rms);
template <typename T>
ad::Var<T> perceptual_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& f);
/// Sum over levels of (1 - cos) between flattened features; shared by the identity and parsing terms.
template <typename T>
ad::Var<T> multilayer_cosine_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& f,
                                  int* degenerate_levels = nullptr);
template <typename T>
ad::Var<T> multilayer_id_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& r,
                              int* degenerate_levels = nullptr);
template <typename T>
ad::Var<T> multilayer_parsing_loss(const ad::Var<T>& x, const ad::Var<T>& y, const FeatureExtractor<T>& p,
                                   int* degenerate_levels = nullptr);
/// Terms with zero weight are skipped (their extractor may be absent).
template <typename T>
TotalLoss<T> total_loss(const ad::Var<T>& x, const ad::Var<T>& y, const LossWeights& weights,
                        const LossExtractors<T>& extractors, PixelNorm norm = PixelNorm::Rms);

// Value forms over images.
ad::Var<float> as_var(const ImageTensor& img);
double pixel_loss(const ImageTensor& x, const ImageTensor& y, PixelNorm norm = PixelNorm::Rms);
double perceptual_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& f);
double multilayer_id_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& r);
double multilayer_parsing_loss(const ImageTensor& x, const ImageTensor& y, const FeatureExtractor<float>& p);
std::pair<double, LossTerms> total_loss(const ImageTensor& x, const ImageTensor& y, const LossWeights& weights,
                                        const LossExtractors<float>& extractors);

/// Number of levels the identity and parsing terms require.
inline constexpr int kMultiLayerLevels = 5;

}  // namespace wplus
