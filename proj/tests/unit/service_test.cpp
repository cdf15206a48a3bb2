#include "wbrec/service.hpp"

#include <gtest/gtest.h>

#include <set>

#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

namespace wbrec {
namespace {

using nlohmann::json;

struct Artifacts {
  testing::TempDir dir;
  TripleModel model;
  ServiceConfig config;

  explicit Artifacts(Backend backend = Backend::exact) {
    model = random_model(120, 6, 8, 1.0, 4);
    model.item_popularity.resize(120);
    for (ItemId i = 0; i < 120; ++i) model.item_popularity[i] = 1000 - i;
    save_model(model, dir.file("model.bin"));
    CatalogIndex::build(model, backend).save(dir.file("index.bin"));
    config.model_path = dir.file("model.bin");
    config.index_path = dir.file("index.bin");
    config.port = 0;
  }
};

json parse(const HttpResult& r) { return json::parse(r.body); }

TEST(Service, HealthBeforeAndAfterLoad) {
  Artifacts a;
  RecommendationService svc(a.config);
  EXPECT_EQ(svc.handle_health().status, 503);
  EXPECT_EQ(parse(svc.handle_health())["status"], "loading");
  EXPECT_EQ(svc.handle_recommend(R"({"basket": ["i1"]})").status, 503);
  svc.load();
  const auto h = svc.handle_health();
  EXPECT_EQ(h.status, 200);
  const auto body = parse(h);
  EXPECT_EQ(body["status"], "ready");
  const auto header = read_model_header(a.config.model_path);
  EXPECT_EQ(body["d"], header.dim);
  EXPECT_EQ(body["n"], header.items);
  EXPECT_EQ(body["m"], header.users);
  EXPECT_EQ(body["backend"], "exact");
}

TEST(Service, MissingArtifactsFailFastNamingThePath) {
  Artifacts a;
  auto config = a.config;
  config.index_path = a.dir.file("nope.idx");
  RecommendationService svc(config);
  try {
    svc.load();
    FAIL() << "expected StartupError";
  } catch (const StartupError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.idx"), std::string::npos);
  }
  EXPECT_FALSE(svc.ready());

  config = a.config;
  config.model_path = a.dir.file("missing-model.bin");
  RecommendationService svc2(config);
  EXPECT_THROW(svc2.start(), StartupError);

  testing::write_text(a.dir.file("garbage.bin"), "not a model");
  config = a.config;
  config.model_path = a.dir.file("garbage.bin");
  RecommendationService svc3(config);
  EXPECT_THROW(svc3.load(), StartupError);
}

TEST(Service, RejectsMismatchedOrAsymmetricIndex) {
  Artifacts a;
  CatalogIndex::build(a.model, Backend::exact, CatalogLayout::asymmetric).save(a.dir.file("asym.bin"));
  auto config = a.config;
  config.index_path = a.dir.file("asym.bin");
  EXPECT_THROW(RecommendationService(config).load(), StartupError);
  CatalogIndex::build(random_model(50, 2, 8, 1.0, 1), Backend::exact).save(a.dir.file("other.bin"));
  config.index_path = a.dir.file("other.bin");
  EXPECT_THROW(RecommendationService(config).load(), StartupError);
}

TEST(Service, KnownUserRecommendationExcludesBasket) {
  Artifacts a;
  RecommendationService svc(a.config);
  svc.load();
  const auto r = svc.handle_recommend(R"({"user_id": "u2", "basket": ["i3", "i17", "i40"], "k": 7})");
  ASSERT_EQ(r.status, 200);
  const auto body = parse(r);
  ASSERT_EQ(body["items"].size(), 7u);
  for (const auto& item : body["items"]) {
    const auto id = item["item_id"].get<std::string>();
    EXPECT_TRUE(id != "i3" && id != "i17" && id != "i40");
    EXPECT_TRUE(item["score"].is_number());
  }
  EXPECT_EQ(body["flags"]["fallback"], false);
  EXPECT_TRUE(body["flags"]["unknown_items"].empty());
  EXPECT_TRUE(body["latency_ms"].is_number());

  // The same pipeline called directly.
  const auto idx = CatalogIndex::load(a.config.index_path);
  const Recommender rec(a.model, idx);
  const auto direct = rec.recommend({UserId{2}, {3, 17, 40}, 7}, a.config.seed);
  for (std::size_t r2 = 0; r2 < 7; ++r2) {
    EXPECT_EQ(body["items"][r2]["item_id"], "i" + std::to_string(direct.entries[r2].item));
  }
}

TEST(Service, DefaultKAndUnknownUser) {
  Artifacts a;
  RecommendationService svc(a.config);
  svc.load();
  const auto body = parse(svc.handle_recommend(R"({"user_id": "stranger", "basket": ["i5"]})"));
  EXPECT_EQ(body["items"].size(), 10u);
  EXPECT_EQ(body["flags"]["fallback"], false);
}

TEST(Service, UnknownItemsFallBackToPopularity) {
  Artifacts a;
  RecommendationService svc(a.config);
  svc.load();
  const auto body = parse(svc.handle_recommend(R"({"basket": ["zz1", "zz2"], "k": 3})"));
  EXPECT_EQ(body["flags"]["fallback"], true);
  EXPECT_EQ(body["flags"]["unknown_items"], json({"zz1", "zz2"}));
  ASSERT_EQ(body["items"].size(), 3u);
  EXPECT_EQ(body["items"][0]["item_id"], "i0");
  EXPECT_EQ(body["items"][2]["item_id"], "i2");
  const auto mixed = parse(svc.handle_recommend(R"({"basket": ["i0", "zz9"], "k": 3})"));
  EXPECT_EQ(mixed["flags"]["fallback"], false);
  EXPECT_EQ(mixed["flags"]["unknown_items"], json({"zz9"}));
}

TEST(Service, ValidationErrors) {
  Artifacts a;
  RecommendationService svc(a.config);
  svc.load();
  for (const char* bad : {"{", "[]", "{}", R"({"basket": "i1"})", R"({"basket": [1, 2]})", R"({"basket": [], "k": 0})",
                          R"({"basket": [], "k": 501})", R"({"basket": [], "k": 2.5})", R"({"basket": [], "k": "3"})",
                          R"({"basket": [], "user_id": 5})"}) {
    const auto r = svc.handle_recommend(bad);
    EXPECT_EQ(r.status, 400) << bad;
    EXPECT_TRUE(parse(r).contains("error")) << bad;
  }
  EXPECT_EQ(svc.handle_recommend(R"({"basket": [], "k": 500})").status, 200);
}

std::string without_latency(const std::string& body) {
  auto j = json::parse(body);
  j.erase("latency_ms");
  return j.dump();
}

TEST(Service, FixedSeedReplayIsIdentical) {
  Artifacts a(Backend::approximate);
  RecommendationService svc(a.config);
  svc.load();
  const std::string request = R"({"user_id": "u1", "basket": ["i1","i2","i3","i4","i5","i6","i7","i8","i9","i10"], "k": 12})";
  const auto first = svc.handle_recommend(request);
  for (int r = 0; r < 5; ++r) EXPECT_EQ(without_latency(svc.handle_recommend(request).body), without_latency(first.body));

  auto config = a.config;
  config.seed_mode = SeedMode::per_request;
  RecommendationService varied(config);
  varied.load();
  std::set<std::string> bodies;
  for (int r = 0; r < 20; ++r) bodies.insert(without_latency(varied.handle_recommend(request).body));
  EXPECT_GT(bodies.size(), 1u);
}

TEST(Service, HttpRoundTrip) {
  Artifacts a;
  RecommendationService svc(a.config);
  svc.start();
  ASSERT_GT(svc.port(), 0);
  httplib::Client client("127.0.0.1", svc.port());
  auto health = client.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ready");
  auto res = client.Post("/v1/recommendations", R"({"user_id": "u0", "basket": ["i9"], "k": 4})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["items"].size(), 4u);
  auto bad = client.Post("/v1/recommendations", "nonsense", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(client.Get("/v2/other")->status, 404);
  svc.stop();
}

TEST(Service, PostProcessConfigApplied) {
  Artifacts a;
  testing::write_text(a.dir.file("post.json"), R"({"blacklist_items": ["i0", "i1"]})");
  auto config = a.config;
  config.post_process_path = a.dir.file("post.json");
  RecommendationService svc(config);
  svc.load();
  const auto body = parse(svc.handle_recommend(R"({"basket": [], "k": 2})"));
  EXPECT_EQ(body["items"][0]["item_id"], "i2");
  config.post_process_path = a.dir.file("absent.json");
  EXPECT_THROW(RecommendationService(config).load(), StartupError);
}

TEST(ServiceConfig, EnvironmentOverrides) {
  ServiceConfig c;
  ::setenv("WBREC_PORT", "9123", 1);
  ::setenv("WBREC_MODEL", "/tmp/m.bin", 1);
  c.apply_env_overrides();
  EXPECT_EQ(c.port, 9123);
  EXPECT_EQ(c.model_path, "/tmp/m.bin");
  ::setenv("WBREC_PORT", "eighty", 1);
  EXPECT_THROW(c.apply_env_overrides(), InvalidArgument);
  ::unsetenv("WBREC_PORT");
  ::unsetenv("WBREC_MODEL");
}

}  // namespace
}  // namespace wbrec
