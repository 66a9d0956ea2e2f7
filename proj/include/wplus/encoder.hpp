#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "wplus/ad/var.hpp"
#include "wplus/config.hpp"
#include "wplus/image.hpp"
#include "wplus/latent.hpp"
#include "wplus/nn/params.hpp"

namespace wplus {

/// Feature maps at 1/2, 1/4 and 1/8 of the input resolution.
template <typename T>
struct FeatureTaps {
  ad::Var<T> shallow;
  ad::Var<T> mid;
  ad::Var<T> deep;
};

/// Shapes an encoder produces for a given config, without allocating weights.
struct EncoderTopology {
  struct Tap {
    int channels = 0;
    int side = 0;
    int pool = 0;
    int n_codes = 0;  // codes emitted by the head on this tap
  };
  Tap shallow, mid, deep;
  int n_codes = 0;
  int dim = 0;
  long long backbone_params = 0;
  long long head_params = 0;
  long long total_params() const { return backbone_params + head_params; }
};

EncoderTopology encoder_topology(const EncoderConfig& config, int input_channels = 3);

/// Truncated squeeze-excitation residual backbone with three pooled linear heads.
/// Codes [0, n1) come from the deep tap, [n1, n1+n2) from the mid tap and the
/// remaining n3 from the shallow tap.
template <typename T>
class BasicEncoder {
 public:
  /// Allocates zero-valued parameters; see build_encoder for initialization.
  BasicEncoder(EncoderConfig config, int stage_index);

  const EncoderConfig& config() const { return config_; }
  int stage_index() const { return stage_index_; }
  int input_channels() const { return stage_index_ > 1 ? 6 : 3; }

  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }

  /// Random backbone/head initialization; heads are zeroed for refinement stages.
  void initialize(std::uint64_t seed);

  FeatureTaps<T> features(const ad::Var<T>& image) const;
  /// Flat (n_codes * dim) latent predicted from the three taps.
  ad::Var<T> heads(const FeatureTaps<T>& taps) const;
  ad::Var<T> forward(const ad::Var<T>& image) const { return heads(features(image)); }

  template <typename U>
  BasicEncoder<U> cast() const {
    BasicEncoder<U> out(config_, stage_index_);
    out.params().copy_from(params_);
    return out;
  }

 private:
  struct Affine {
    ad::Var<T> gamma, beta;
  };
  struct Unit {
    int in = 0, depth = 0, stride = 1;
    ad::Var<T> shortcut_w;  // undefined when in == depth
    Affine shortcut_bn;
    Affine bn1, bn2;
    ad::Var<T> conv1, conv2, prelu;
    ad::Var<T> se_fc1, se_fc2;
  };
  struct Head {
    int n_codes = 0, pool = 0;
    ad::Var<T> weight, bias;
  };

  Affine add_affine(const std::string& name, int channels);
  ad::Var<T> apply_affine(const Affine& a, const ad::Var<T>& x) const;
  ad::Var<T> apply_unit(const Unit& u, const ad::Var<T>& x) const;
  ad::Var<T> apply_head(const Head& h, const ad::Var<T>& tap) const;

  EncoderConfig config_;
  int stage_index_;
  nn::ParameterStore<T> params_;
  ad::Var<T> stem_w_, stem_prelu_;
  Affine stem_bn_;
  std::array<std::vector<Unit>, 3> stages_;
  std::array<Head, 3> heads_;  // deep, mid, shallow
};

extern template class BasicEncoder<float>;
extern template class BasicEncoder<double>;

/// One inversion pass. Stage 1 maps an image to a latent; later stages map the
/// 6-channel concatenation (input, previous render) to a latent residual.
class InversionStage {
 public:
  virtual ~InversionStage() = default;
  virtual int stage_index() const = 0;
  virtual int input_resolution() const = 0;
  virtual LatentCode predict(const ImageTensor& input) const = 0;
};

class Encoder final : public InversionStage {
 public:
  Encoder(EncoderConfig config, int stage_index);

  int stage_index() const override { return net_.stage_index(); }
  int input_resolution() const override { return net_.config().input_resolution; }
  LatentCode predict(const ImageTensor& input) const override;

  const EncoderConfig& config() const { return net_.config(); }
  BasicEncoder<float>& net() { return net_; }
  const BasicEncoder<float>& net() const { return net_; }

 private:
  BasicEncoder<float> net_;
};

/// stage_index >= 1; throws ConfigError for invalid configs.
Encoder build_encoder(const EncoderConfig& config, int stage_index, std::uint64_t seed);

/// W1 = E1(x). Requires a stage-1 encoder and x at the encoder's input resolution.
LatentCode encode(const InversionStage& e, const ImageTensor& x);

/// W_t = E_t(x, prev_render) + prev for t > 1.
LatentCode encode_refine(const InversionStage& e, const ImageTensor& x, const ImageTensor& prev_render,
                         const LatentCode& prev);

/// Number of trainable scalars.
long long param_count(const Encoder& e);
template <typename T>
long long param_count(const nn::ParameterStore<T>& p) {
  return p.scalar_count();
}

struct CheckpointInfo {
  EncoderConfig config;
  int stage_index = 1;
  int epoch = 0;
  LossWeights loss_weights;
  int format_version = 1;
};

/// Writes `encoder.wtar` and `manifest.json` into `dir` (created if needed).
void save_checkpoint(const Encoder& e, const CheckpointInfo& info, const std::filesystem::path& dir);
std::unique_ptr<Encoder> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace wplus
