#include "wplus/encoder.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"
#include "wplus/tensor_archive.hpp"

namespace wplus {

namespace {

int se_hidden(int depth, int reduction) { return std::max(1, depth / reduction); }

}  // namespace

EncoderTopology encoder_topology(const EncoderConfig& config, int input_channels) {
  config.validate();
  const auto& bb = config.backbone;
  EncoderTopology t;
  t.n_codes = config.n_codes;
  t.dim = config.dim;
  long long n = 0;
  n += static_cast<long long>(input_channels) * bb.stem_channels * 9 + 3LL * bb.stem_channels;
  int in = bb.stem_channels;
  for (const auto& st : bb.stages) {
    for (int u = 0; u < st.units; ++u) {
      const int d = st.depth;
      if (in != d) n += static_cast<long long>(in) * d + 2LL * d;
      n += 2LL * in + 9LL * in * d + d + 9LL * d * d + 2LL * d + 2LL * d * se_hidden(d, bb.se_reduction);
      in = d;
    }
  }
  t.backbone_params = n;
  const int r = config.input_resolution;
  t.shallow = {bb.stages[0].depth, r / 2, config.pool_sizes[2], config.split[2]};
  t.mid = {bb.stages[1].depth, r / 4, config.pool_sizes[1], config.split[1]};
  t.deep = {bb.stages[2].depth, r / 8, config.pool_sizes[0], config.split[0]};
  for (const auto* tap : {&t.deep, &t.mid, &t.shallow}) {
    if (tap->n_codes == 0) continue;
    const long long fan_in = static_cast<long long>(tap->channels) * tap->pool * tap->pool;
    const long long out = static_cast<long long>(tap->n_codes) * config.dim;
    t.head_params += fan_in * out + out;
  }
  return t;
}

template <typename T>
typename BasicEncoder<T>::Affine BasicEncoder<T>::add_affine(const std::string& name, int channels) {
  return {params_.add(name + ".gamma", ad::Shape::vec(channels), ad::Array<T>::Ones(channels)),
          params_.add(name + ".beta", ad::Shape::vec(channels), ad::Array<T>::Zero(channels))};
}

template <typename T>
BasicEncoder<T>::BasicEncoder(EncoderConfig config, int stage_index)
    : config_(std::move(config)), stage_index_(stage_index) {
  config_.validate();
  if (stage_index < 1) throw ValidationError("stage_index must be >= 1");
  using ad::Array;
  using ad::Shape;
  const auto& bb = config_.backbone;
  const int cin = input_channels();
  stem_w_ = params_.add("stem.conv", Shape{bb.stem_channels, cin * 9, 1}, Array<T>::Zero(bb.stem_channels * cin * 9));
  stem_bn_ = add_affine("stem.bn", bb.stem_channels);
  stem_prelu_ = params_.add("stem.prelu", Shape::vec(bb.stem_channels), Array<T>::Constant(bb.stem_channels, T(0.25)));
  int in = bb.stem_channels;
  for (int s = 0; s < 3; ++s) {
    for (int u = 0; u < bb.stages[s].units; ++u) {
      const int d = bb.stages[s].depth;
      const std::string p = "body" + std::to_string(s) + "." + std::to_string(u) + ".";
      Unit unit;
      unit.in = in;
      unit.depth = d;
      unit.stride = u == 0 ? 2 : 1;
      if (in != d) {
        unit.shortcut_w = params_.add(p + "shortcut.conv", Shape{d, in, 1}, Array<T>::Zero(Eigen::Index(d) * in));
        unit.shortcut_bn = add_affine(p + "shortcut.bn", d);
      }
      unit.bn1 = add_affine(p + "bn1", in);
      unit.conv1 = params_.add(p + "conv1", Shape{d, in * 9, 1}, Array<T>::Zero(Eigen::Index(d) * in * 9));
      unit.prelu = params_.add(p + "prelu", Shape::vec(d), Array<T>::Constant(d, T(0.25)));
      unit.conv2 = params_.add(p + "conv2", Shape{d, d * 9, 1}, Array<T>::Zero(Eigen::Index(d) * d * 9));
      unit.bn2 = add_affine(p + "bn2", d);
      const int hidden = se_hidden(d, bb.se_reduction);
      unit.se_fc1 = params_.add(p + "se.fc1", Shape{hidden, d, 1}, Array<T>::Zero(Eigen::Index(hidden) * d));
      unit.se_fc2 = params_.add(p + "se.fc2", Shape{d, hidden, 1}, Array<T>::Zero(Eigen::Index(hidden) * d));
      stages_[s].push_back(unit);
      in = d;
    }
  }
  const std::array<int, 3> tap_channels{bb.stages[2].depth, bb.stages[1].depth, bb.stages[0].depth};
  const std::array<const char*, 3> names{"head.deep", "head.mid", "head.shallow"};
  for (int h = 0; h < 3; ++h) {
    Head head;
    head.n_codes = config_.split[h];
    head.pool = config_.pool_sizes[h];
    if (head.n_codes > 0) {
      const int fan_in = tap_channels[h] * head.pool * head.pool;
      const int out = head.n_codes * config_.dim;
      head.weight = params_.add(std::string(names[h]) + ".weight", Shape{out, fan_in, 1}, Array<T>::Zero(Eigen::Index(out) * fan_in));
      head.bias = params_.add(std::string(names[h]) + ".bias", Shape::vec(out), Array<T>::Zero(out));
    }
    heads_[h] = head;
  }
}

template <typename T>
void BasicEncoder<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& e : params_.entries()) {
    auto& v = e.var.value();
    const auto& sh = e.var.shape();
    const bool is_head = e.name.rfind("head.", 0) == 0;
    if (e.name.ends_with(".gamma")) {
      v.setOnes();
    } else if (e.name.ends_with(".beta")) {
      v.setZero();
    } else if (e.name.ends_with("prelu")) {
      v.setConstant(T(0.25));
    } else if (is_head && stage_index_ > 1) {
      v.setZero();  // refinement starts as the identity on the previous latent
    } else if (e.name.ends_with(".bias")) {
      v.setZero();
    } else {
      // Weights are (out, fan_in, 1); kaiming-uniform with gain sqrt(2) for conv, 1 for linear layers.
      const double gain = is_head || e.name.find(".se.") != std::string::npos ? 1.0 : std::sqrt(6.0);
      v = nn::uniform_init<T>(v.size(), static_cast<double>(sh.h), rng, gain);
    }
  }
}

template <typename T>
ad::Var<T> BasicEncoder<T>::apply_affine(const Affine& a, const ad::Var<T>& x) const {
  return ad::channel_add(ad::channel_mul(x, a.gamma), a.beta);
}

template <typename T>
ad::Var<T> BasicEncoder<T>::apply_unit(const Unit& u, const ad::Var<T>& x) const {
  ad::Var<T> shortcut = u.in == u.depth ? ad::subsample(x, u.stride)
                                         : apply_affine(u.shortcut_bn, ad::conv2d(x, u.shortcut_w, 1, u.stride, 0));
  ad::Var<T> r = apply_affine(u.bn1, x);
  r = ad::conv2d(r, u.conv1, 3, 1, 1);
  r = ad::prelu(r, u.prelu);
  r = ad::conv2d(r, u.conv2, 3, u.stride, 1);
  r = apply_affine(u.bn2, r);
  const ad::Var<T> squeeze = ad::relu(ad::linear(ad::global_avg_pool(r), u.se_fc1, ad::Var<T>()));
  r = ad::channel_mul(r, ad::sigmoid(ad::linear(squeeze, u.se_fc2, ad::Var<T>())));
  return ad::add(r, shortcut);
}

template <typename T>
FeatureTaps<T> BasicEncoder<T>::features(const ad::Var<T>& image) const {
  const auto& sh = image.shape();
  if (sh.c != input_channels() || sh.h != config_.input_resolution || sh.w != config_.input_resolution)
    throw ValidationError("encoder expects a " + std::to_string(input_channels()) + "x" +
                          std::to_string(config_.input_resolution) + "x" + std::to_string(config_.input_resolution) +
                          " input, got " + std::to_string(sh.c) + "x" + std::to_string(sh.h) + "x" + std::to_string(sh.w));
  ad::Var<T> x = ad::prelu(apply_affine(stem_bn_, ad::conv2d(image, stem_w_, 3, 1, 1)), stem_prelu_);
  std::array<ad::Var<T>, 3> taps;
  for (int s = 0; s < 3; ++s) {
    for (const auto& u : stages_[s]) x = apply_unit(u, x);
    taps[s] = x;
  }
  return {taps[0], taps[1], taps[2]};
}

template <typename T>
ad::Var<T> BasicEncoder<T>::apply_head(const Head& h, const ad::Var<T>& tap) const {
  const ad::Var<T> pooled = ad::adaptive_avg_pool(tap, h.pool);
  return ad::linear(ad::reshape(pooled, ad::Shape::vec(pooled.size())), h.weight, h.bias);
}

template <typename T>
ad::Var<T> BasicEncoder<T>::heads(const FeatureTaps<T>& taps) const {
  std::vector<ad::Var<T>> parts;
  const std::array<const ad::Var<T>*, 3> sources{&taps.deep, &taps.mid, &taps.shallow};
  for (int h = 0; h < 3; ++h)
    if (heads_[h].n_codes > 0) parts.push_back(apply_head(heads_[h], *sources[h]));
  return ad::concat(parts);
}

template class BasicEncoder<float>;
template class BasicEncoder<double>;

Encoder::Encoder(EncoderConfig config, int stage_index) : net_(std::move(config), stage_index) {}

LatentCode Encoder::predict(const ImageTensor& input) const {
  ad::NoGradGuard no_grad;
  const auto x = ad::Var<float>::constant(ad::Shape{input.channels(), input.height(), input.width()}, input.values());
  const auto out = net_.forward(x);
  LatentCode code(config().n_codes, config().dim);
  code.flat() = out.value().matrix();
  return code;
}

Encoder build_encoder(const EncoderConfig& config, int stage_index, std::uint64_t seed) {
  Encoder e(config, stage_index);
  e.net().initialize(seed);
  return e;
}

namespace {

void check_input(const InversionStage& e, const ImageTensor& x) {
  if (x.channels() != 3) throw ValidationError("encoder input must have 3 channels");
  if (x.height() != e.input_resolution() || x.width() != e.input_resolution())
    throw ValidationError("image is " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                          " but the encoder expects " + std::to_string(e.input_resolution()) + "x" +
                          std::to_string(e.input_resolution()));
}

}  // namespace

LatentCode encode(const InversionStage& e, const ImageTensor& x) {
  if (e.stage_index() != 1) throw UsageError("encode() needs a stage-1 encoder; use encode_refine for later stages");
  check_input(e, x);
  return e.predict(x);
}

LatentCode encode_refine(const InversionStage& e, const ImageTensor& x, const ImageTensor& prev_render,
                         const LatentCode& prev) {
  if (e.stage_index() <= 1) throw UsageError("encode_refine() needs a refinement encoder (stage > 1)");
  check_input(e, x);
  if (!x.same_shape(prev_render)) throw ValidationError("previous render and input differ in resolution");
  const LatentCode residual = e.predict(concat_channels(x, prev_render));
  if (!residual.same_shape(prev)) throw ValidationError("residual and previous latent differ in shape");
  return prev + residual;
}

long long param_count(const Encoder& e) { return e.net().params().scalar_count(); }

void save_checkpoint(const Encoder& e, const CheckpointInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  e.net().params().to_archive().save(dir / "encoder.wtar");
  nlohmann::json manifest{{"config", info.config},
                          {"stage_index", info.stage_index},
                          {"epoch", info.epoch},
                          {"loss_weights", info.loss_weights},
                          {"format_version", info.format_version}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

std::unique_ptr<Encoder> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint manifest missing in " + dir.string());
  CheckpointInfo ci;
  try {
    const auto j = nlohmann::json::parse(in);
    ci.format_version = j.at("format_version").get<int>();
    if (ci.format_version != 1) throw FormatError("unsupported checkpoint format_version");
    ci.config = j.at("config").get<EncoderConfig>();
    ci.stage_index = j.at("stage_index").get<int>();
    ci.epoch = j.at("epoch").get<int>();
    ci.loss_weights = j.at("loss_weights").get<LossWeights>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("checkpoint manifest is malformed: " + std::string(ex.what()));
  }
  auto enc = std::make_unique<Encoder>(ci.config, ci.stage_index);
  enc->net().params().load_archive(TensorArchive::load(dir / "encoder.wtar"));
  if (info) *info = ci;
  return enc;
}

}  // namespace wplus
