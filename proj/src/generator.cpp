#include "wplus/generator.hpp"

#include <cmath>
#include <fstream>

#include "wplus/ad/ops.hpp"
#include "wplus/error.hpp"

namespace wplus {

void SynthesisLayout::validate() const {
  if (n_codes < 1 || dim < 1) throw ValidationError("generator needs n_codes >= 1 and dim >= 1");
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw ValidationError("generator resolution must be a power of two >= 8, got " + std::to_string(resolution));
  if (const_channels < 1) throw ValidationError("generator needs const_channels >= 1");
  if (static_cast<int>(channels.size()) != n_codes) throw ValidationError("generator needs one channel count per code");
  for (int c : channels)
    if (c < 1) throw ValidationError("generator channel counts must be positive");
}

std::vector<int> SynthesisLayout::resolution_steps() const {
  int ups = 0;
  while ((4 << ups) < resolution) ++ups;
  std::vector<int> steps(n_codes);
  for (int i = 0; i < n_codes; ++i) steps[i] = static_cast<int>((static_cast<long long>(i + 1) * ups) / n_codes);
  return steps;
}

template <typename T>
StyleSynthesis<T>::StyleSynthesis(SynthesisLayout layout) : layout_(std::move(layout)) {
  layout_.validate();
  using ad::Array;
  using ad::Shape;
  const int c0 = layout_.const_channels;
  const_input_ = params_.add("const", Shape{c0, 4, 4}, Array<T>::Zero(c0 * 16));
  int cin = c0;
  for (int i = 0; i < layout_.n_codes; ++i) {
    const int cout = layout_.channels[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    Layer l;
    l.cin = cin;
    l.affine_w = params_.add(p + "affine.weight", Shape{cin, layout_.dim, 1}, Array<T>::Zero(Eigen::Index(cin) * layout_.dim));
    l.affine_b = params_.add(p + "affine.bias", Shape::vec(cin), Array<T>::Ones(cin));
    l.conv_w = params_.add(p + "conv.weight", Shape{cout, cin * 9, 1}, Array<T>::Zero(Eigen::Index(cout) * cin * 9));
    l.bias = params_.add(p + "bias", Shape::vec(cout), Array<T>::Zero(cout));
    layers_.push_back(l);
    cin = cout;
  }
  rgb_affine_w_ = params_.add("rgb.affine.weight", Shape{cin, layout_.dim, 1}, Array<T>::Zero(Eigen::Index(cin) * layout_.dim));
  rgb_affine_b_ = params_.add("rgb.affine.bias", Shape::vec(cin), Array<T>::Ones(cin));
  rgb_w_ = params_.add("rgb.weight", Shape{3, cin, 1}, Array<T>::Zero(3 * cin));
  rgb_b_ = params_.add("rgb.bias", Shape::vec(3), Array<T>::Zero(3));
  // G is never trained here; gradients flow only to the latent.
  params_.set_requires_grad(false);
}

template <typename T>
StyleSynthesis<T> StyleSynthesis<T>::random(SynthesisLayout layout, std::uint64_t seed, double style_scale) {
  StyleSynthesis net(std::move(layout));
  std::mt19937_64 rng(seed);
  const double affine_std = style_scale / std::sqrt(static_cast<double>(net.layout_.dim));
  for (auto& e : net.params_.entries()) {
    auto& v = e.var.value();
    if (e.name.ends_with("affine.weight")) {
      v = nn::normal_init<T>(v.size(), affine_std, rng);
    } else if (e.name.ends_with("affine.bias")) {
      v.setOnes();
    } else if (e.name == "rgb.weight") {
      v = nn::normal_init<T>(v.size(), 1.0 / std::sqrt(static_cast<double>(e.var.shape().h)), rng);
    } else if (e.name.ends_with("bias")) {
      v = nn::normal_init<T>(v.size(), 0.1, rng);
    } else {
      v = nn::normal_init<T>(v.size(), 1.0, rng);
    }
  }
  return net;
}

template <typename T>
ad::Var<T> StyleSynthesis<T>::forward(const ad::Var<T>& latent) const {
  const int dim = layout_.dim;
  if (latent.size() != Eigen::Index(layout_.n_codes) * dim)
    throw ValidationError("latent size does not match generator (n_codes x dim)");
  const auto steps = layout_.resolution_steps();
  const T gain = T(std::sqrt(2.0));
  ad::Var<T> x = const_input_;
  int current = 0;
  for (int i = 0; i < layout_.n_codes; ++i) {
    for (; current < steps[i]; ++current) x = ad::upsample2x(x);
    const Layer& l = layers_[i];
    const ad::Var<T> w = ad::slice(latent, Eigen::Index(i) * dim, dim);
    const ad::Var<T> style = ad::linear(w, l.affine_w, l.affine_b);
    ad::Var<T> y = ad::conv2d(ad::channel_mul(x, style), l.conv_w, 3, 1, 1);
    // Demodulation: rescale each output channel to unit expected norm.
    const ad::Var<T> energy = ad::linear(ad::square(style), ad::kernel_energy(l.conv_w, l.cin), ad::Var<T>());
    y = ad::channel_mul(y, ad::rsqrt(energy, T(1e-8)));
    y = ad::channel_add(y, l.bias);
    x = ad::scale(ad::leaky_relu(y, T(0.2)), gain);
  }
  const ad::Var<T> w_last = ad::slice(latent, Eigen::Index(layout_.n_codes - 1) * dim, dim);
  const ad::Var<T> style = ad::linear(w_last, rgb_affine_w_, rgb_affine_b_);
  ad::Var<T> rgb = ad::conv2d(ad::channel_mul(x, style), rgb_w_, 1, 1, 0);
  rgb = ad::channel_add(rgb, rgb_b_);
  if (layout_.activation == OutputActivation::Tanh) return ad::tanh(rgb);
  return ad::clamp(rgb, T(-1), T(1));
}

template class StyleSynthesis<float>;
template class StyleSynthesis<double>;

GeneratorHandle::GeneratorHandle(std::shared_ptr<const StyleSynthesis<float>> net, std::string family)
    : net_(std::move(net)), family_(std::move(family)) {}

void GeneratorHandle::check_latent(const LatentCode& w) const {
  if (!valid()) throw UsageError("generator handle is empty");
  if (w.n_codes() != n_codes() || w.dim() != dim())
    throw ValidationError("latent is " + std::to_string(w.n_codes()) + "x" + std::to_string(w.dim()) +
                          " but generator expects " + std::to_string(n_codes()) + "x" + std::to_string(dim()));
}

ImageTensor synthesize(const GeneratorHandle& g, const LatentCode& w) {
  g.check_latent(w);
  ad::NoGradGuard no_grad;
  const auto latent = ad::Var<float>::constant(ad::Shape::vec(w.size()), Eigen::ArrayXf(w.flat().array()));
  const auto out = g.network().forward(latent);
  const int r = g.output_resolution();
  ImageTensor img(r, r, 3, out.value());
  return img.clamp();
}

template <typename T>
ad::Var<T> synthesize_graph(const StyleSynthesis<T>& g, const ad::Var<T>& latent) {
  return g.forward(latent);
}
template ad::Var<float> synthesize_graph<float>(const StyleSynthesis<float>&, const ad::Var<float>&);
template ad::Var<double> synthesize_graph<double>(const StyleSynthesis<double>&, const ad::Var<double>&);

ad::Var<float> synthesize_graph(const GeneratorHandle& g, const ad::Var<float>& latent) {
  return g.network().forward(latent);
}

namespace {
constexpr double kToyStyleScale = 0.25;
}  // namespace

GeneratorHandle make_toy_generator(std::uint64_t seed, int n_codes, int dim, int resolution, int channels) {
  SynthesisLayout layout;
  layout.n_codes = n_codes;
  layout.dim = dim;
  layout.resolution = resolution;
  layout.const_channels = channels;
  layout.channels.assign(std::max(n_codes, 0), channels);
  layout.activation = OutputActivation::Tanh;
  layout.validate();
  // Mild style modulation keeps G(w) smooth enough to invert at this size.
  auto net = std::make_shared<const StyleSynthesis<float>>(StyleSynthesis<float>::random(layout, seed, kToyStyleScale));
  return GeneratorHandle(std::move(net), "toy");
}

LatentSampler gaussian_sampler(int n_codes, int dim) {
  return [n_codes, dim](std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    LatentCode c(n_codes, dim);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = dist(rng);
    return c;
  };
}

LatentCode mean_latent(const GeneratorHandle& g, const LatentSampler& sampler, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("mean_latent needs n_samples >= 1");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd acc;
  for (int i = 0; i < n_samples; ++i) {
    const LatentCode c = sampler(rng);
    g.check_latent(c);
    if (acc.size() == 0) acc = Eigen::MatrixXd::Zero(c.n_codes(), c.dim());
    acc += c.codes().cast<double>();
  }
  acc /= static_cast<double>(n_samples);
  return LatentCode(LatentMatrix(acc.cast<float>()));
}

std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const ImageTensor& img) {
  std::array<double, 3> m{}, s{};
  const Eigen::Index p = img.plane();
  for (int c = 0; c < 3; ++c) {
    const Eigen::ArrayXd v = img.values().segment(c * p, p).cast<double>();
    m[c] = v.mean();
    s[c] = std::sqrt((v - m[c]).square().mean());
  }
  return {m, s};
}

void to_json(nlohmann::json& j, const GeneratorManifest& m) {
  j = nlohmann::json{{"family", m.family},
                     {"n_codes", m.n_codes},
                     {"dim", m.dim},
                     {"resolution", m.resolution},
                     {"fingerprint", {{"mean", m.fingerprint_mean}, {"std", m.fingerprint_std}}}};
}

void from_json(const nlohmann::json& j, GeneratorManifest& m) {
  m.family = j.at("family").get<std::string>();
  m.n_codes = j.at("n_codes").get<int>();
  m.dim = j.at("dim").get<int>();
  m.resolution = j.at("resolution").get<int>();
  m.fingerprint_mean = j.at("fingerprint").at("mean").get<std::array<double, 3>>();
  m.fingerprint_std = j.at("fingerprint").at("std").get<std::array<double, 3>>();
}

GeneratorManifest GeneratorManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("generator manifest not found: " + path.string());
  try {
    return nlohmann::json::parse(in).get<GeneratorManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw AssetError("generator manifest " + path.string() + " is malformed: " + e.what());
  }
}

void GeneratorManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(*this).dump(2) << "\n";
}

namespace {

SynthesisLayout layout_from_archive(const TensorArchive& ar, int resolution) {
  SynthesisLayout layout;
  layout.resolution = resolution;
  layout.const_channels = ar.get("const").dims[0];
  for (int i = 0;; ++i) {
    const std::string key = "layer" + std::to_string(i) + ".conv.weight";
    if (!ar.contains(key)) break;
    layout.channels.push_back(ar.get(key).dims[0]);
  }
  layout.n_codes = static_cast<int>(layout.channels.size());
  layout.dim = layout.n_codes > 0 ? ar.get("layer0.affine.weight").dims[1] : 0;
  layout.activation = ar.contains("meta.tanh_output") && ar.get("meta.tanh_output").values[0] > 0.5f
                          ? OutputActivation::Tanh
                          : OutputActivation::Clamp;
  return layout;
}

}  // namespace

GeneratorHandle load_pretrained_generator(const std::filesystem::path& asset, const GeneratorManifest& manifest) {
  if (manifest.family != kPretrainedFamily)
    throw AssetError("unsupported generator family '" + manifest.family + "' (expected " + kPretrainedFamily + ")");
  if (!std::filesystem::exists(asset))
    throw AssetError("generator asset not found: " + asset.string() + " (export one with `wplus export-generator`)");
  TensorArchive ar;
  SynthesisLayout layout;
  try {
    ar = TensorArchive::load(asset);
    layout = layout_from_archive(ar, manifest.resolution);
  } catch (const Error& e) {
    throw AssetError("generator asset " + asset.string() + " is unreadable: " + e.what());
  }
  if (layout.n_codes != manifest.n_codes || layout.dim != manifest.dim)
    throw AssetError("generator asset holds " + std::to_string(layout.n_codes) + "x" + std::to_string(layout.dim) +
                     " codes but manifest declares " + std::to_string(manifest.n_codes) + "x" +
                     std::to_string(manifest.dim));
  std::shared_ptr<StyleSynthesis<float>> net;
  try {
    net = std::make_shared<StyleSynthesis<float>>(layout);
    net->params().load_archive(ar);
  } catch (const Error& e) {
    throw AssetError("generator asset does not match manifest: " + std::string(e.what()));
  }
  GeneratorHandle g(net, manifest.family);

  LatentCode w_avg(layout.n_codes, layout.dim);
  if (ar.contains("w_avg")) {
    const auto& t = ar.get("w_avg");
    if (t.values.size() != w_avg.size()) throw AssetError("w_avg in generator asset has the wrong size");
    w_avg.flat() = t.values.matrix();
  }
  const auto [mean, stdv] = channel_statistics(synthesize(g, w_avg));
  for (int c = 0; c < 3; ++c) {
    const double ref_s = manifest.fingerprint_std[c];
    const double scale = std::max({std::abs(manifest.fingerprint_mean[c]), ref_s, 1e-6});
    if (std::abs(mean[c] - manifest.fingerprint_mean[c]) > 0.05 * scale ||
        std::abs(stdv[c] - ref_s) > 0.05 * std::max(ref_s, 1e-6))
      throw AssetError("generator fingerprint mismatch on channel " + std::to_string(c) +
                       ": the asset does not reproduce the manifest's reference statistics");
  }
  return g;
}

GeneratorHandle load_pretrained_generator(const std::filesystem::path& asset, const std::filesystem::path& manifest) {
  return load_pretrained_generator(asset, GeneratorManifest::load(manifest));
}

GeneratorManifest export_generator(const GeneratorHandle& g, const LatentCode& w_avg,
                                   const std::filesystem::path& asset, const std::filesystem::path& manifest) {
  g.check_latent(w_avg);
  TensorArchive ar = g.network().params().to_archive();
  ar.put("w_avg", {g.n_codes(), g.dim(), 1}, Eigen::ArrayXf(w_avg.flat().array()));
  const bool tanh_out = g.network().layout().activation == OutputActivation::Tanh;
  ar.put("meta.tanh_output", {1, 1, 1}, Eigen::ArrayXf::Constant(1, tanh_out ? 1.0f : 0.0f));
  ar.save(asset);
  GeneratorManifest m;
  m.family = kPretrainedFamily;
  m.n_codes = g.n_codes();
  m.dim = g.dim();
  m.resolution = g.output_resolution();
  std::tie(m.fingerprint_mean, m.fingerprint_std) = channel_statistics(synthesize(g, w_avg));
  m.save(manifest);
  return m;
}

}  // namespace wplus
