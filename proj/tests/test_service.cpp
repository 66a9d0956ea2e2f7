#include <gtest/gtest.h>

#include <random>

#include "wplus/image_io.hpp"
#include "wplus/service.hpp"

#include <httplib.h>  // after Eigen: a system header defines _res

using namespace wplus;
using nlohmann::json;

namespace {

struct Fixture {
  GeneratorHandle g = make_toy_generator(7, 6, 16, 32);
  std::vector<std::shared_ptr<const Encoder>> pipeline{
      std::make_shared<const Encoder>(build_encoder(EncoderConfig::toy(), 1, 1)),
      std::make_shared<const Encoder>(build_encoder(EncoderConfig::toy(), 2, 2))};
  std::vector<SemanticDirection> dirs = [] {
    SemanticDirection d;
    d.name = "age";
    d.dim = 16;
    d.values = LatentMatrix::Constant(1, 16, 0.3f);
    return std::vector<SemanticDirection>{d};
  }();
};

std::string png_of(const ImageTensor& img) {
  const auto b = encode_png(to_rgb8(img));
  return {b.begin(), b.end()};
}

std::string sample_png(const GeneratorHandle& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return png_of(synthesize(g, gaussian_sampler(6, 16)(rng)));
}

class ServiceHttp : public ::testing::Test {
 protected:
  void SetUp() override {
    svc = std::make_unique<EditingService>(f.g, f.pipeline, f.dirs);
    server = std::make_unique<HttpServer>(*svc, 2);
    port = server->start();
    cli = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
  void TearDown() override { server->stop(); }

  std::string session() {
    auto r = cli->Post("/api/sessions");
    EXPECT_EQ(r->status, 201);
    return json::parse(r->body).at("session_id");
  }
  httplib::Result upload(const std::string& sid, const std::string& png, int stages) {
    httplib::MultipartFormDataItems items{{"image", png, "face.png", "image/png"},
                                          {"stages", std::to_string(stages), "", ""}};
    return cli->Post("/api/sessions/" + sid + "/invert", items);
  }
  httplib::Result edit(const std::string& sid, const json& body) {
    return cli->Post("/api/sessions/" + sid + "/edit", body.dump(), "application/json");
  }
  std::string fetch_preview(const std::string& url) {
    auto r = cli->Get(url);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
    return r->body;
  }

  Fixture f;
  std::unique_ptr<EditingService> svc;
  std::unique_ptr<HttpServer> server;
  std::unique_ptr<httplib::Client> cli;
  int port = 0;
};

}  // namespace

TEST_F(ServiceHttp, InvertAndZeroEditPreviewIdentity) {
  const auto sid = session();
  auto r = upload(sid, sample_png(f.g, 1), 2);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto inv = json::parse(r->body);
  const std::string lid = inv.at("latent_id");
  const auto original = fetch_preview(inv.at("preview"));
  EXPECT_EQ(decode_png(std::span(reinterpret_cast<const std::uint8_t*>(original.data()), original.size())).width, 32);

  auto e = edit(sid, {{"latent_id", lid}, {"op", "direction"}, {"params", {{"direction", "age"}, {"alpha", 0.0}}}});
  ASSERT_EQ(e->status, 200) << e->body;
  const auto ed = json::parse(e->body);
  EXPECT_NE(ed.at("latent_id"), lid);
  EXPECT_EQ(fetch_preview(ed.at("preview")), original);

  auto second = json::parse(upload(sid, sample_png(f.g, 2), 1)->body);
  auto lerp = json::parse(edit(sid, {{"latent_id", lid}, {"op", "interpolate"},
                                     {"params", {{"other_latent_id", second.at("latent_id")}, {"lambda", 0.0}}}})->body);
  EXPECT_EQ(fetch_preview(lerp.at("preview")), original);
  auto mix = json::parse(edit(sid, {{"latent_id", lid}, {"op", "mix"},
                                    {"params", {{"style_latent_id", second.at("latent_id")}, {"keep", 6}}}})->body);
  EXPECT_EQ(fetch_preview(mix.at("preview")), original);

  auto inl = upload(sid, sample_png(f.g, 1), 2);
  EXPECT_EQ(json::parse(inl->body).at("latent_id"), lid);  // deterministic mode reuses the latent
  httplib::MultipartFormDataItems items{{"image", sample_png(f.g, 1), "face.png", "image/png"}, {"stages", "2", "", ""}};
  auto withb64 = json::parse(cli->Post("/api/sessions/" + sid + "/invert?inline=1", items)->body);
  EXPECT_TRUE(withb64.contains("preview_base64"));
}

TEST_F(ServiceHttp, StagesGiveDistinctLatentsAndBadInputsAre400) {
  const auto sid = session();
  const auto png = sample_png(f.g, 3);
  const auto a = json::parse(upload(sid, png, 1)->body), b = json::parse(upload(sid, png, 2)->body);
  EXPECT_NE(a.at("latent_id"), b.at("latent_id"));

  auto bad = upload(sid, png, 5);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body).at("code"), "bad_stages");
  EXPECT_TRUE(json::parse(bad->body).contains("message"));
  EXPECT_EQ(upload(sid, "not a png", 1)->status, 400);

  auto unknown_dir = edit(sid, {{"latent_id", a.at("latent_id")}, {"op", "direction"}, {"params", {{"direction", "nope"}}}});
  EXPECT_EQ(unknown_dir->status, 400);
  EXPECT_EQ(edit(sid, {{"latent_id", a.at("latent_id")}, {"op", "explode"}})->status, 400);
  EXPECT_EQ(edit(sid, {{"latent_id", "l0000000000000000"}, {"op", "direction"}, {"params", {{"direction", "age"}}}})->status, 404);
  EXPECT_EQ(cli->Get("/api/previews/p0000000000000000.png")->status, 404);
}

TEST_F(ServiceHttp, SessionIsolation) {
  const auto s1 = session(), s2 = session();
  ASSERT_NE(s1, s2);
  const auto lid = json::parse(upload(s1, sample_png(f.g, 4), 1)->body).at("latent_id").get<std::string>();
  EXPECT_EQ(cli->Get("/api/sessions/" + s1 + "/latents/" + lid)->status, 200);
  auto other = cli->Get("/api/sessions/" + s2 + "/latents/" + lid);
  EXPECT_EQ(other->status, 404);
  EXPECT_EQ(json::parse(other->body).at("code"), "latent_not_found");
  EXPECT_EQ(edit(s2, {{"latent_id", lid}, {"op", "direction"}, {"params", {{"direction", "age"}, {"alpha", 1}}}})->status, 404);
  EXPECT_EQ(upload("s0000000000000000", sample_png(f.g, 4), 1)->status, 404);
}

TEST_F(ServiceHttp, StoredLatentsAreImmutable) {
  const auto sid = session();
  const auto lid = json::parse(upload(sid, sample_png(f.g, 5), 2)->body).at("latent_id").get<std::string>();
  const auto before = json::parse(cli->Get("/api/sessions/" + sid + "/latents/" + lid)->body);
  for (double alpha : {1.0, -2.0, 3.0}) {
    auto e = edit(sid, {{"latent_id", lid}, {"op", "direction"}, {"params", {{"direction", "age"}, {"alpha", alpha}}}});
    ASSERT_EQ(e->status, 200);
    EXPECT_NE(json::parse(e->body).at("latent_id"), lid);
  }
  const auto after = json::parse(cli->Get("/api/sessions/" + sid + "/latents/" + lid)->body);
  EXPECT_EQ(after.at("values"), before.at("values"));
  EXPECT_EQ(after.at("preview"), before.at("preview"));
}

TEST_F(ServiceHttp, DirectionsListing) {
  auto r = cli->Get("/api/directions");
  ASSERT_EQ(r->status, 200);
  const auto j = json::parse(r->body);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].at("name"), "age");
  EXPECT_EQ(j[0].at("alpha_range"), json::array({-3.0, 3.0}));
}

TEST(Service, IdleSessionsExpire) {
  Fixture f;
  EditingService svc(f.g, f.pipeline, f.dirs, ServiceConfig{std::chrono::seconds(60), 1, true});
  auto now = EditingService::Clock::now();
  svc.set_clock([&] { return now; });
  const std::string sid = svc.create_session().body.at("session_id");
  const std::string lid = svc.invert(sid, sample_png(f.g, 6), 1).body.at("latent_id");
  now += std::chrono::seconds(30);
  EXPECT_EQ(svc.latent(sid, lid).status, 200);  // touch
  now += std::chrono::seconds(45);
  EXPECT_EQ(svc.expire_idle(), 0u);
  now += std::chrono::seconds(61);
  EXPECT_EQ(svc.expire_idle(), 1u);
  EXPECT_EQ(svc.session_count(), 0u);
  EXPECT_EQ(svc.latent(sid, lid).status, 404);
}

TEST(Service, MissingPipelineIs503) {
  Fixture f;
  EditingService svc(f.g, {}, f.dirs);
  const std::string sid = svc.create_session().body.at("session_id");
  const auto r = svc.invert(sid, sample_png(f.g, 1), 1);
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(r.body.at("code"), "pipeline_unavailable");
}
