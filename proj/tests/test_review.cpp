#include "crisis/review_service.hpp"
#include "toy_fixture.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace crisis;
using namespace crisis::review;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& artifacts() {
  static const fs::path dir = [] {
    auto d = toy::fresh_dir("review");
    toy::make(d).run_all();
    return d;
  }();
  return dir;
}

ServiceOptions options_for(const fs::path& overrides) {
  ServiceOptions o;
  o.artifacts = artifacts();
  o.overrides_file = overrides;
  return o;
}

fs::path fresh_overrides(const std::string& name) {
  const auto p = toy::fresh_dir("review_" + name) / "overrides.json";
  return p;
}

const json kBody = {{"sa", {"public_health_safety"}}, {"cn", {"victim"}}, {"grief", true}, {"mental_health", true}};

}  // namespace

TEST(ReviewState, ListIsSortedBySizeWithAllFields) {
  ReviewState s(options_for(fresh_overrides("list")));
  const auto r = s.list_topics();
  ASSERT_EQ(r.status, 200);
  ASSERT_FALSE(r.body.empty());
  for (std::size_t i = 1; i < r.body.size(); ++i) EXPECT_GE(r.body[i - 1]["size"], r.body[i]["size"]);
  for (const auto& t : r.body)
    for (const auto* k : {"topic_id", "label", "size", "keywords", "coherence", "auto_labels", "human_labels"})
      EXPECT_TRUE(t.contains(k)) << k;
  EXPECT_TRUE(r.body[0]["human_labels"].is_null());
}

TEST(ReviewState, DetailAddsRepresentativeDocs) {
  ReviewState s(options_for(fresh_overrides("detail")));
  const auto r = s.get_topic(0);
  ASSERT_EQ(r.status, 200);
  ASSERT_FALSE(r.body["representative_docs"].empty());
  for (const auto& d : r.body["representative_docs"]) EXPECT_TRUE(d["text"].is_string());
  EXPECT_EQ(s.get_topic(999).status, 404);
  EXPECT_EQ(s.get_topic(999).body, (json{{"unknown_ids", {999}}}));
}

TEST(ReviewState, PutIsWriteThroughAndIdempotent) {
  const auto path = fresh_overrides("put");
  ReviewState s(options_for(path));
  const auto first = s.put_labels(1, kBody.dump());
  ASSERT_EQ(first.status, 200);
  EXPECT_EQ(first.body["version"], 1);
  EXPECT_EQ(first.body["human_labels"], kBody);

  const auto stored = schema::load_overrides(path, schema::load_schema(pipeline::PipelineConfig::data_dir() / "schema.json"));
  ASSERT_EQ(stored.count(1), 1u);
  EXPECT_EQ(stored.at(1).sa, schema::LabelSet{"public_health_safety"});
  const auto bytes = read_file(path);

  const auto again = s.put_labels(1, kBody.dump());
  EXPECT_EQ(again.body["version"], 1);
  EXPECT_EQ(read_file(path), bytes);

  auto changed = kBody;
  changed["grief"] = false;
  EXPECT_EQ(s.put_labels(1, changed.dump()).body["version"], 2);

  const auto listed = s.get_topic(1).body;
  EXPECT_EQ(listed["human_labels"], changed);
}

TEST(ReviewState, OverridesSurviveRestart) {
  const auto path = fresh_overrides("restart");
  {
    ReviewState s(options_for(path));
    ASSERT_EQ(s.put_labels(2, kBody.dump()).status, 200);
  }
  ReviewState s(options_for(path));
  EXPECT_EQ(s.get_topic(2).body["human_labels"], kBody);
}

TEST(ReviewState, RejectsBadBodies) {
  const auto path = fresh_overrides("bad");
  ReviewState s(options_for(path));
  EXPECT_EQ(s.put_labels(0, "{not json").status, 400);
  EXPECT_EQ(s.put_labels(0, R"({"sa": [], "cn": ["victim"]})").status, 400);
  EXPECT_EQ(s.put_labels(0, R"({"sa": ["weather"]})").status, 400);
  EXPECT_EQ(s.put_labels(0, R"({"sa": ["recovery"], "cn": ["memorial"]})").status, 400);
  const auto unknown = s.put_labels(77, kBody.dump());
  EXPECT_EQ(unknown.status, 404);
  EXPECT_EQ(unknown.body, (json{{"unknown_ids", {77}}}));
  EXPECT_FALSE(fs::exists(path));
  EXPECT_EQ(s.version(), 0u);
}

TEST(ReviewState, ConcurrentWritesSerialize) {
  const auto path = fresh_overrides("concurrent");
  ReviewState s(options_for(path));
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t)
    pool.emplace_back([&s, t] {
      auto body = kBody;
      body["grief"] = (t % 2 == 0);
      for (int i = 0; i < 10; ++i) s.put_labels(t % 3, body.dump());
    });
  for (auto& th : pool) th.join();
  const auto stored = json::parse(read_file(path));
  EXPECT_EQ(stored.size(), 3u);
  EXPECT_GE(s.version(), 3u);
}

TEST(ReviewState, MissingArtifactsAreStale) {
  ServiceOptions o;
  o.artifacts = toy::fresh_dir("review_empty");
  EXPECT_THROW(ReviewState{o}, StaleInputError);
}

TEST(ReviewServer, HttpRoundTrip) {
  ReviewServer server(options_for(fresh_overrides("http")));
  const int port = server.bind("127.0.0.1", 0);
  server.start_background();
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Get("/api/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body), (json{{"status", "ok"}}));

  res = cli.Get("/api/schema");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["families"]["SA"].size(), 6u);

  res = cli.Put("/api/topics/0/labels", kBody.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);

  res = cli.Get("/api/topics");
  ASSERT_TRUE(res);
  bool seen = false;
  for (const auto& t : json::parse(res->body))
    if (t["topic_id"] == 0) {
      EXPECT_EQ(t["human_labels"], kBody);
      seen = true;
    }
  EXPECT_TRUE(seen);

  res = cli.Put("/api/topics/42/labels", kBody.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(json::parse(res->body), (json{{"unknown_ids", {42}}}));

  res = cli.Get("/api/topics/0");
  ASSERT_TRUE(res);
  EXPECT_TRUE(json::parse(res->body).contains("representative_docs"));
  server.stop();
}

TEST(ReviewServer, BusyPortIsAStartupError) {
  ReviewServer first(options_for(fresh_overrides("busy1")));
  const int port = first.bind("127.0.0.1", 0);
  ReviewServer second(options_for(fresh_overrides("busy2")));
  EXPECT_THROW(second.bind("127.0.0.1", port), Error);
}
