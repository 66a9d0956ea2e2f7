#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wplus/ad/var.hpp"
#include "wplus/image.hpp"
#include "wplus/latent.hpp"
#include "wplus/nn/params.hpp"

namespace wplus {

enum class OutputActivation { Tanh, Clamp };

/// Shape of a style-modulated synthesis stack: a learned 4x4 constant followed by
/// one modulated 3x3 convolution per code, then a modulated 1x1 RGB projection.
struct SynthesisLayout {
  int n_codes = 0;
  int dim = 0;
  int resolution = 0;
  int const_channels = 0;
  std::vector<int> channels;  // output channels of each modulated conv, size n_codes
  OutputActivation activation = OutputActivation::Tanh;

  void validate() const;
  /// log2(side / 4) of the feature map each conv layer runs at.
  std::vector<int> resolution_steps() const;
};

template <typename T>
class StyleSynthesis {
 public:
  explicit StyleSynthesis(SynthesisLayout layout);

  /// Weights drawn from N(0, 1); style affines from N(0, style_scale^2 / dim).
  static StyleSynthesis random(SynthesisLayout layout, std::uint64_t seed, double style_scale = 1.0);

  const SynthesisLayout& layout() const { return layout_; }
  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }

  /// `latent` is a flat (n_codes * dim) vector; returns a (3, res, res) image.
  ad::Var<T> forward(const ad::Var<T>& latent) const;

  template <typename U>
  StyleSynthesis<U> cast() const {
    StyleSynthesis<U> out(layout_);
    out.params().copy_from(params_);
    return out;
  }

 private:
  struct Layer {
    ad::Var<T> affine_w, affine_b, conv_w, bias;
    int cin = 0;
  };

  SynthesisLayout layout_;
  nn::ParameterStore<T> params_;
  ad::Var<T> const_input_;
  std::vector<Layer> layers_;
  ad::Var<T> rgb_affine_w_, rgb_affine_b_, rgb_w_, rgb_b_;
};

extern template class StyleSynthesis<float>;
extern template class StyleSynthesis<double>;

/// Read-only handle to a synthesis network G. Copies share the network.
class GeneratorHandle {
 public:
  GeneratorHandle() = default;
  explicit GeneratorHandle(std::shared_ptr<const StyleSynthesis<float>> net, std::string family = "toy");

  int n_codes() const { return net_->layout().n_codes; }
  int dim() const { return net_->layout().dim; }
  int output_resolution() const { return net_->layout().resolution; }
  bool deterministic() const { return true; }
  const std::string& family() const { return family_; }
  bool valid() const { return net_ != nullptr; }

  const StyleSynthesis<float>& network() const { return *net_; }

  /// Throws ValidationError when `w` does not match n_codes x dim.
  void check_latent(const LatentCode& w) const;

 private:
  std::shared_ptr<const StyleSynthesis<float>> net_;
  std::string family_;
};

/// G(w): image of output_resolution in [-1, 1]. Bit-identical for identical inputs.
ImageTensor synthesize(const GeneratorHandle& g, const LatentCode& w);

/// Differentiable G over a flat latent leaf; returns a (3, res, res) node.
template <typename T>
ad::Var<T> synthesize_graph(const StyleSynthesis<T>& g, const ad::Var<T>& latent);
ad::Var<float> synthesize_graph(const GeneratorHandle& g, const ad::Var<float>& latent);

/// Small deterministic generator for desk-scale work. resolution must be a power
/// of two >= 8, n_codes >= 1, dim >= 1.
GeneratorHandle make_toy_generator(std::uint64_t seed, int n_codes, int dim, int resolution, int channels = 16);

/// Draws one latent from a generator's native latent distribution.
using LatentSampler = std::function<LatentCode(std::mt19937_64&)>;

/// i.i.d. standard normal entries.
LatentSampler gaussian_sampler(int n_codes, int dim);

/// Element-wise mean of n_samples draws (n_samples >= 1).
LatentCode mean_latent(const GeneratorHandle& g, const LatentSampler& sampler, int n_samples, std::uint64_t seed = 0);

/// Manifest describing an external synthesis asset.
struct GeneratorManifest {
  std::string family;
  int n_codes = 0;
  int dim = 0;
  int resolution = 0;
  std::array<double, 3> fingerprint_mean{};
  std::array<double, 3> fingerprint_std{};

  static GeneratorManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

void to_json(nlohmann::json& j, const GeneratorManifest& m);
void from_json(const nlohmann::json& j, GeneratorManifest& m);

inline constexpr const char* kPretrainedFamily = "stylegan2-wplus";

/// Loads weights from a tensor archive and validates them against the manifest:
/// shape fields must agree and G(w_avg) must reproduce the stored per-channel
/// mean/std fingerprint within 5%. Throws AssetError otherwise.
GeneratorHandle load_pretrained_generator(const std::filesystem::path& asset, const GeneratorManifest& manifest);
GeneratorHandle load_pretrained_generator(const std::filesystem::path& asset, const std::filesystem::path& manifest);

/// Writes `g` as an asset plus the matching manifest (fingerprint computed here).
GeneratorManifest export_generator(const GeneratorHandle& g, const LatentCode& w_avg,
                                   const std::filesystem::path& asset, const std::filesystem::path& manifest);

/// Per-channel mean and std of an image.
std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const ImageTensor& img);

}  // namespace wplus
