// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "wplus/ad/ops.hpp"
#include "wplus/editing.hpp"
#include "wplus/error.hpp"
#include "wplus/image_io.hpp"
#include "wplus/log.hpp"
#include "wplus/metrics.hpp"
#include "wplus/service.hpp"
#include "wplus/stego.hpp"
#include "wplus/trainer.hpp"

#include <httplib.h>  // after Eigen: a system header defines _res

using namespace wplus;

namespace {

struct Check {
  std::ostringstream why;
  bool ok = true;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) why << "; ";
      why << what;
      ok = false;
    }
  }
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<void(Check&, std::ostringstream&)> run;
};

ImageTensor random_image(int side, std::mt19937_64& rng, int channels = 3) {
  std::uniform_real_distribution<float> d(-1, 1);
  ImageTensor x(side, side, channels);
  for (auto& v : x.values()) v = d(rng);
  return x;
}

LatentCode random_latent(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<float> dist;
  LatentCode w(n, d);
  for (auto& v : w.codes().reshaped()) v = dist(rng);
  return w;
}

oracle::Img to_oracle(const ImageTensor& x) {
  oracle::Img o{x.channels(), x.height(), x.width(), {}};
  for (auto v : x.values()) o.v.push_back(v);
  return o;
}

// Features chosen by the sign of the first pixel.
class StubExtractor final : public FeatureExtractor<double> {
 public:
  StubExtractor(ExtractorKind kind, std::vector<ad::Array<double>> a, std::vector<ad::Array<double>> b)
      : kind_(kind), a_(std::move(a)), b_(std::move(b)) {}
  std::string name() const override { return "stub"; }
  ExtractorKind kind() const override { return kind_; }
  int levels() const override { return static_cast<int>(a_.size()); }
  std::vector<ad::Var<double>> extract(const ad::Var<double>& image) const override {
    std::vector<ad::Var<double>> out;
    for (const auto& v : image.value()[0] > 0 ? a_ : b_) out.push_back(ad::Var<double>::constant(ad::Shape::vec(v.size()), v));
    return out;
  }

 private:
  ExtractorKind kind_;
  std::vector<ad::Array<double>> a_, b_;
};

class ConstantStage final : public InversionStage {
 public:
  ConstantStage(int stage, LatentCode c) : stage_(stage), c_(std::move(c)) {}
  int stage_index() const override { return stage_; }
  int input_resolution() const override { return 32; }
  LatentCode predict(const ImageTensor&) const override { return c_; }

 private:
  int stage_;
  LatentCode c_;
};

double heldout_pixel_loss(const std::vector<const InversionStage*>& p, const GeneratorHandle& g, const Dataset& d, int n) {
  double s = 0;
  for (const auto& x : d.samples) s += pixel_loss(invert(p, g, x.image, n).render, x.image);
  return s / static_cast<double>(d.size());
}

// --- criteria -------------------------------------------------------------

void shape_architecture(Check& c, std::ostringstream& info) {
  const auto cfg = EncoderConfig::standard();
  const auto t = encoder_topology(cfg);
  c.expect(cfg.input_resolution == 256, "input resolution");
  c.expect(t.n_codes == 18 && t.dim == 512, "output shape");
  c.expect(t.shallow.side == 128 && t.mid.side == 64 && t.deep.side == 32, "tap sides");
  c.expect(t.deep.pool == 7 && t.mid.pool == 5 && t.shallow.pool == 3, "pools");
  c.expect(t.deep.n_codes == 9 && t.mid.n_codes == 5 && t.shallow.n_codes == 4, "split");
  // the forward contract on the toy config, where it fits the time budget
  std::mt19937_64 rng(1);
  const auto w = encode(build_encoder(EncoderConfig::toy(), 1, 1), random_image(32, rng));
  c.expect(w.n_codes() == 6 && w.dim() == 16 && w.all_finite(), "toy forward shape");
  info << "18x512 from 256^2, taps 128/64/32, pools (7,5,3), split (9,5,4)";
}

void parameter_count(Check& c, std::ostringstream& info) {
  const long long n = encoder_topology(EncoderConfig::standard()).total_params();
  const double rel = (static_cast<double>(n) - 85e6) / 85e6;
  c.expect(std::abs(rel) <= 0.15, "outside +-15% of 85M");
  info << n << " params (" << (rel >= 0 ? "+" : "") << rel * 100 << "% vs 85M)";
}

void loss_suite(Check& c, std::ostringstream& info) {
  using ad::Array;
  using ad::Shape;
  using ad::Var;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Array<double> v(3 * 32 * 32);
  for (auto& e : v) e = u(rng);
  v[0] = 0.5;
  const auto x = Var<double>::constant(Shape{3, 32, 32}, v);
  LossExtractors<double> toy{make_toy_extractor<double>(ExtractorKind::Perceptual, 11),
                             make_toy_extractor<double>(ExtractorKind::Identity, 12),
                             make_toy_extractor<double>(ExtractorKind::Parsing, 13)};
  c.expect(pixel_loss(x, x).item() == 0, "pixel(x,x)");
  c.expect(perceptual_loss(x, x, *toy.perceptual).item() == 0, "perceptual(x,x)");
  c.expect(std::abs(multilayer_id_loss(x, x, *toy.identity).item()) < 1e-12, "id(x,x)");
  c.expect(std::abs(multilayer_parsing_loss(x, x, *toy.parsing).item()) < 1e-12, "parsing(x,x)");

  Array<double> e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  Array<double> yv = v;
  yv[0] = -0.5;
  const auto y = Var<double>::constant(Shape{3, 32, 32}, yv);
  const StubExtractor orth(ExtractorKind::Identity, std::vector(5, e1), std::vector(5, e2));
  const StubExtractor anti(ExtractorKind::Identity, std::vector(5, e1), std::vector(5, Array<double>(-e1)));
  const StubExtractor porth(ExtractorKind::Parsing, std::vector(5, e1), std::vector(5, e2));
  c.expect(std::abs(multilayer_id_loss(x, x, orth).item()) < 1e-12, "stub 0 case");
  c.expect(std::abs(multilayer_id_loss(x, y, orth).item() - 5) < 1e-12, "stub 5 case");
  c.expect(std::abs(multilayer_id_loss(x, y, anti).item() - 10) < 1e-12, "stub 10 case");
  c.expect(std::abs(multilayer_parsing_loss(x, y, porth).item() - 5) < 1e-12, "parsing stub 5 case");

  // every term driven to exactly 1
  const auto one = Var<double>::constant(Shape{3, 4, 4}, 1.0), zero = Var<double>::constant(Shape{3, 4, 4}, 0.0);
  std::vector<Array<double>> b(5, e1);
  b[4] = e2;
  LossExtractors<double> stubs;
  stubs.perceptual = std::make_shared<PassThroughExtractor<double>>(ExtractorKind::Perceptual, 1);
  stubs.identity = std::make_shared<StubExtractor>(ExtractorKind::Identity, std::vector(5, e1), b);
  stubs.parsing = std::make_shared<StubExtractor>(ExtractorKind::Parsing, std::vector(5, e1), b);
  const auto unit = total_loss(one, zero, LossWeights{}, stubs);
  c.expect(std::abs(unit.total.item() - 3.3) < 1e-12, "unit terms with default weights != 3.3");
  c.expect(total_loss(one, one, LossWeights{}, stubs).total.item() == 0, "total(x,x)");

  // central differences on 8x8
  Array<double> a8(3 * 64), b8(3 * 64);
  for (auto& e : a8) e = u(rng);
  for (auto& e : b8) e = u(rng);
  const auto x8 = Var<double>::constant(Shape{3, 8, 8}, a8);
  auto y8 = Var<double>::parameter(Shape{3, 8, 8}, b8);
  auto f = [&] { return total_loss(x8, y8, LossWeights{}, toy).total; };
  y8.zero_grad();
  ad::backward(f());
  const Array<double> grad = y8.grad();
  double worst = 0;
  for (Eigen::Index i = 0; i < y8.size(); ++i) {
    const double keep = y8.value()[i], h = 1e-6;
    y8.value()[i] = keep + h;
    const double up = f().item();
    y8.value()[i] = keep - h;
    const double dn = f().item();
    y8.value()[i] = keep;
    const double num = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-3}));
  }
  c.expect(worst < 1e-4, "gradient check");
  info << "unit terms -> " << unit.total.item() << ", max grad rel err " << worst;
}

void refinement_algebra(Check& c, std::ostringstream& info) {
  std::mt19937_64 rng(3);
  const auto g = make_toy_generator(7, 6, 16, 32);
  const auto e1 = build_encoder(EncoderConfig::toy(), 1, 1);
  const auto e2 = build_encoder(EncoderConfig::toy(), 2, 2);
  for (int t = 0; t < 10; ++t) {
    const auto prev = random_latent(6, 16, rng);
    c.expect(encode_refine(e2, random_image(32, rng), random_image(32, rng), prev) == prev, "zero-init refine != prev");
  }
  const auto x = random_image(32, rng);
  const auto w1 = encode(e1, x);
  const auto c2 = LatentCode::Constant(6, 16, 0.25f), c3 = LatentCode::Constant(6, 16, -0.5f);
  const ConstantStage s2(2, c2), s3(3, c3), z2(2, LatentCode(6, 16)), z3(3, LatentCode(6, 16));
  const auto r3 = invert({&e1, &s2, &s3}, g, x, 3);
  c.expect(r3.latent == (w1 + c2) + c3, "W3 != W1 + c2 + c3");
  c.expect(r3.render == synthesize(g, r3.latent), "render != G(W3)");
  c.expect(invert({&e1, &z2, &z3}, g, x, 3).latent == w1, "zero residuals != stage 1");
  c.expect(invert({&e1, &s2, &s3}, g, x, 1).latent == w1, "n=1 != encode");
  info << "identity on 10 inputs, 3-stage constant recursion exact";
}

void toy_training(Check& c, std::ostringstream& info) {
  const auto g = make_toy_generator(7, 6, 16, 32);
  const auto train = Dataset::sample(g, gaussian_sampler(6, 16), 512, 1);
  const auto held = Dataset::sample(g, gaussian_sampler(6, 16), 64, 2);
  const auto enc = EncoderConfig::toy();
  TrainConfig cfg;
  cfg.base_learning_rate = 1e-2;
  cfg.batch_size = 8;
  cfg.epochs = 1000;
  cfg.max_steps = 2000;
  cfg.weights = {1, 0, 0, 0};
  cfg.seed = 7;

  const auto init = build_encoder(enc, 1, cfg.seed * 1000003ULL + 1);
  const double l0 = heldout_pixel_loss({&init}, g, held, 1);
  const auto s1 = train_stage(1, train, g, {}, cfg, enc, {});
  const double l1 = heldout_pixel_loss({s1.encoder.get()}, g, held, 1);
  cfg.max_steps = 1000;
  const auto s2 = train_stage(2, train, g, {s1.encoder.get()}, cfg, enc, {});
  const double l2 = heldout_pixel_loss({s1.encoder.get(), s2.encoder.get()}, g, held, 2);
  c.expect(s1.steps <= 2000 && s2.steps <= 1000, "step budget");
  c.expect(l1 <= 0.5 * l0, "stage 1 above 50% of init");
  c.expect(l2 <= l1, "stage 2 worse than stage 1");
  info << "held-out pixel loss init " << l0 << " -> stage1 " << l1 << " (" << 100 * l1 / l0 << "%) -> stage2 " << l2
       << ", steps " << s1.steps << "+" << s2.steps;
}

void optimization_baseline(Check& c, std::ostringstream& info) {
  const auto g = make_toy_generator(7, 6, 16, 32);
  auto sampler = gaussian_sampler(6, 16);
  std::mt19937_64 rng(4);
  double worst = 0;
  for (int t = 0; t < 5; ++t) {
    const auto x = synthesize(g, sampler(rng));
    const auto init = sampler(rng);
    const auto r = invert_by_optimization(g, x, 500, init, LossWeights{1, 0, 0, 0});
    const double start = pixel_loss(synthesize(g, init), x);
    const double end = pixel_loss(synthesize(g, r.latent), x);
    worst = std::max(worst, end / start);
    c.expect(end < 0.1 * start, "trial above 10%");
    c.expect(r.best_loss <= r.initial_loss, "best above init");
  }
  info << "worst final/initial over 5 targets " << worst;
}

void split_search(Check& c, std::ostringstream& info) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> knots(1, 6);
  int agree = 0;
  for (int t = 0; t < 50; ++t) {
    std::array<std::vector<double>, 3> f;
    for (auto& fi : f) {
      fi.assign(19, 0.0);
      for (int j = knots(rng); j > 0; --j) {
        const int at = static_cast<int>(u(rng) * 18) + 1;
        const double h = u(rng);
        for (int n = at; n <= 18; ++n) fi[n] += h;
      }
    }
    SplitSearchConfig cfg;
    cfg.epsilon = 0.01;
    cfg.quality_fn = [f](int a, int b, int c3) { return f[0][a] + f[1][b] + f[2][c3]; };
    const auto r = search_latent_split(cfg);
    agree += std::array<int, 3>{r.n1, r.n2, r.n3} == oracle::best_split(18, 0.01, 0, cfg.quality_fn);
  }
  c.expect(agree == 50, "disagreement with exhaustive search");
  SplitSearchConfig stair;
  stair.epsilon = 0;
  stair.quality_fn = [](int a, int b, int c3) { return std::min(a, 9) / 9.0 + std::min(b, 5) / 5.0 + std::min(c3, 4) / 4.0; };
  const auto r = search_latent_split(stair);
  c.expect(r.n1 == 9 && r.n2 == 5 && r.n3 == 4, "staircase");
  info << agree << "/50 agree, staircase -> (" << r.n1 << "," << r.n2 << "," << r.n3 << ")";
}

void metrics_oracle(Check& c, std::ostringstream& info) {
  std::mt19937_64 rng(6);
  double worst_psnr = 0, worst_ssim = 0;
  for (int t = 0; t < 100; ++t) {
    const auto a = random_image(64, rng);
    auto b = a;
    std::normal_distribution<float> n(0, 0.05f + 0.01f * t);
    for (auto& v : b.values()) v = std::clamp(v + n(rng), -1.0f, 1.0f);
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - oracle::psnr(to_oracle(a), to_oracle(b))));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - oracle::ssim(to_oracle(a), to_oracle(b))));
  }
  c.expect(worst_psnr <= 1e-6, "psnr oracle");
  c.expect(worst_ssim <= 1e-6, "ssim oracle");
  // 0.2 offset on values away from the clip range
  ImageTensor x(32, 32);
  std::uniform_real_distribution<float> d(-0.7f, 0.7f);
  for (auto& v : x.values()) v = d(rng);
  ImageTensor y = x;
  for (auto& v : y.values()) v += 0.2f;
  const double db = psnr(x, y);
  c.expect(std::abs(db - 20.0) < 1e-5, "offset psnr != 20 dB");
  info << "max |dPSNR| " << worst_psnr << ", max |dSSIM| " << worst_ssim << ", offset " << db << " dB";
}

void steganography(Check& c, std::ostringstream& info) {
  std::mt19937_64 rng(7);
  c.expect(payload_bits(18, 512, Dtype::F16) == 147648, "18x512 f16 payload != 147,648 bits");
  c.expect(payload_bits(18, 512, Dtype::F16) == oracle::stego_bits(18, 512, 2), "payload arithmetic");
  int exact = 0, max_step = 0;
  for (int t = 0; t < 100; ++t) {
    const bool full = t % 10 == 0;
    const auto secret = random_latent(full ? 18 : 6, full ? 512 : 16, rng).quantized_f16();
    Rgb8Image carrier{full ? 256 : 48, full ? 256 : 48, {}};
    carrier.pixels.resize(static_cast<std::size_t>(carrier.height) * carrier.width * 3);
    for (auto& p : carrier.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
    const std::uint64_t key = rng();
    const auto stego = hide(secret, carrier, key);
    exact += reveal(stego, key) == secret;
    for (std::size_t i = 0; i < carrier.pixels.size(); ++i)
      max_step = std::max(max_step, std::abs(int(stego.pixels[i]) - int(carrier.pixels[i])));
  }
  c.expect(exact == 100, "round trip not bit-exact");
  c.expect(max_step <= 1, "channel change > 1");

  double min_db = 1e9;
  for (int t = 0; t < 20; ++t) {
    Rgb8Image carrier{128, 128, {}};
    carrier.pixels.resize(128 * 128 * 3);
    for (auto& p : carrier.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
    const double occupancy = double(payload_bits(6, 16)) / carrier.pixels.size();
    c.expect(occupancy <= 0.05, "occupancy");
    const auto stego = hide(random_latent(6, 16, rng), carrier, rng());
    min_db = std::min(min_db, psnr(from_rgb8(carrier), from_rgb8(stego)));
  }
  c.expect(min_db >= 51.0, "carrier PSNR < 51 dB");

  Rgb8Image carrier{48, 48, {}};
  carrier.pixels.resize(48 * 48 * 3);
  for (auto& p : carrier.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  const auto stego = hide(random_latent(6, 16, rng), carrier, 99);
  int rejected = 0;
  for (int t = 0; t < 100; ++t) {
    try {
      reveal(stego, 1000 + t);
    } catch (const CorruptionError&) {
      ++rejected;
    }
  }
  c.expect(rejected == 100, "wrong key accepted");
  info << exact << "/100 exact, max step " << max_step << ", min PSNR " << min_db << " dB, " << rejected
       << "/100 wrong keys rejected";
}

void editing_algebra(Check& c, std::ostringstream& info) {
  std::mt19937_64 rng(8);
  const auto a = random_latent(18, 512, rng), b = random_latent(18, 512, rng);
  c.expect(interpolate(a, b, 0.0) == a, "lam 0");
  c.expect(interpolate(a, b, 1.0) == b, "lam 1");
  c.expect(interpolate(LatentCode::Constant(18, 512, 0), LatentCode::Constant(18, 512, 2), 0.5) ==
               LatentCode::Constant(18, 512, 1),
           "midpoint");
  c.expect(style_mix(a, b, 18) == a, "keep 18");
  c.expect(style_mix(a, b, 0) == b, "keep 0");
  const auto m = style_mix(a, b, 7);
  c.expect(m.codes().topRows(7) == a.codes().topRows(7) && m.codes().bottomRows(11) == b.codes().bottomRows(11), "keep 7");
  c.expect(style_mix(a, b) == m, "default keep");
  SemanticDirection d;
  d.name = "dir";
  d.dim = 512;
  d.values = random_latent(1, 512, rng).codes();
  const float err = (manipulate(manipulate(a, d, 2.5), d, -2.5).codes() - a.codes()).cwiseAbs().maxCoeff();
  c.expect(err <= 1e-5f, "manipulate inverse");
  c.expect(manipulate(a, d, 0.0) == a, "alpha 0");
  info << "manipulate round-trip max err " << err;
}

void service_contract(Check& c, std::ostringstream& info) {
  using nlohmann::json;
  const auto g = make_toy_generator(7, 6, 16, 32);
  std::vector<std::shared_ptr<const Encoder>> pipe{std::make_shared<const Encoder>(build_encoder(EncoderConfig::toy(), 1, 1)),
                                                   std::make_shared<const Encoder>(build_encoder(EncoderConfig::toy(), 2, 2))};
  SemanticDirection d;
  d.name = "age";
  d.dim = 16;
  d.values = LatentMatrix::Constant(1, 16, 0.3f);
  EditingService svc(g, pipe, {d});
  HttpServer server(svc, 2);
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  auto session = [&] { return json::parse(cli.Post("/api/sessions")->body).at("session_id").get<std::string>(); };
  std::mt19937_64 rng(9);
  const auto bytes = encode_png(to_rgb8(synthesize(g, gaussian_sampler(6, 16)(rng))));
  const std::string png(bytes.begin(), bytes.end());

  const auto s1 = session(), s2 = session();
  httplib::MultipartFormDataItems items{{"image", png, "face.png", "image/png"}, {"stages", "2", "", ""}};
  const auto inv = json::parse(cli.Post("/api/sessions/" + s1 + "/invert", items)->body);
  const std::string lid = inv.at("latent_id");
  const std::string original = cli.Get(inv.at("preview").get<std::string>())->body;
  const auto before = cli.Get("/api/sessions/" + s1 + "/latents/" + lid)->body;

  auto edit = [&](const std::string& sid, double alpha) {
    json body{{"latent_id", lid}, {"op", "direction"}, {"params", {{"direction", "age"}, {"alpha", alpha}}}};
    return cli.Post("/api/sessions/" + sid + "/edit", body.dump(), "application/json");
  };
  const auto zero = json::parse(edit(s1, 0.0)->body);
  c.expect(zero.at("latent_id") != lid, "edit reused latent id");
  c.expect(cli.Get(zero.at("preview").get<std::string>())->body == original, "alpha=0 preview differs");

  const auto cross = cli.Get("/api/sessions/" + s2 + "/latents/" + lid);
  c.expect(cross->status == 404, "latent visible across sessions");
  c.expect(edit(s2, 1.0)->status == 404, "edit across sessions");

  for (double alpha : {1.0, -2.0}) edit(s1, alpha);
  c.expect(cli.Get("/api/sessions/" + s1 + "/latents/" + lid)->body == before, "stored latent changed");
  server.stop();
  info << "HTTP on port " << port << ": preview identity, cross-session 404, immutable latent";
}

}  // namespace

int main() {
  log::set_level(log::Level::Error);
  const std::vector<Criterion> criteria{
      {"shape/architecture", 1, shape_architecture},
      {"parameter count", 60, parameter_count},
      {"loss suite", 30, loss_suite},
      {"refinement algebra", 10, refinement_algebra},
      {"toy end-to-end training", 900, toy_training},
      {"optimization baseline", 120, optimization_baseline},
      {"split search", 5, split_search},
      {"metrics oracle", 30, metrics_oracle},
      {"steganography", 60, steganography},
      {"editing algebra", 5, editing_algebra},
      {"service contract", 60, service_contract},
  };
  int failures = 0;
  for (const auto& cr : criteria) {
    Check check;
    std::ostringstream info;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(check, info);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.budget_seconds) check.expect(false, "over time budget of " + std::to_string(cr.budget_seconds) + " s");
    failures += !check.ok;
    std::printf("%s  %-26s %8.2f s  %s%s%s\n", check.ok ? "PASS" : "FAIL", cr.name.c_str(), secs, info.str().c_str(),
                check.ok ? "" : "  | ", check.why.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
