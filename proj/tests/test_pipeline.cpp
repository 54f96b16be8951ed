#include "crisis/pipeline.hpp"
#include "toy_fixture.hpp"

#include <gtest/gtest.h>

using namespace crisis;
using namespace crisis::pipeline;
namespace fs = std::filesystem;

TEST(Stages, NamesRoundTrip) {
  for (Stage s : all_stages()) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_THROW(parse_stage("nope"), ConfigError);
}

TEST(Stages, DependenciesPrecedeDependents) {
  const auto order = all_stages();
  ASSERT_EQ(order.size(), 8u);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (Stage d : dependencies(order[i])) {
      const auto pos = std::find(order.begin(), order.end(), d) - order.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i) << to_string(order[i]);
    }
}

TEST(Config, RelativePathsResolveAgainstConfigDirectory) {
  const auto cfg = PipelineConfig::load(toy::config_path());
  EXPECT_EQ(cfg.corpus(), toy::config_path().parent_path() / "corpus.jsonl");
  EXPECT_EQ(cfg.resolve("/abs/x.json"), fs::path("/abs/x.json"));
  EXPECT_EQ(cfg.seed(), 42u);
}

TEST(Config, SeedOverrideWins) {
  auto cfg = PipelineConfig::load(toy::config_path());
  cfg.seed_override = 7;
  EXPECT_EQ(cfg.seed(), 7u);
}

TEST(Config, Errors) {
  EXPECT_THROW(PipelineConfig::load("/nonexistent/config.json"), ConfigError);
  EXPECT_THROW(PipelineConfig(nlohmann::json::array(), "."), ConfigError);
  EXPECT_THROW(PipelineConfig(nlohmann::json::object(), ".").corpus(), ConfigError);
  const PipelineConfig bad(nlohmann::json{{"lda", {{"num_topics", "nine"}}}}, ".");
  EXPECT_THROW(bad.get<int>("lda", "num_topics", 9), ConfigError);
  const PipelineConfig bad_section(nlohmann::json{{"lda", 3}}, ".");
  EXPECT_THROW(bad_section.section("lda"), ConfigError);
}

TEST(Grid, StandardAndExplicit) {
  const auto dir = toy::fresh_dir("grid");
  write_file_atomic(dir / "std.json", R"({"standard": true})");
  EXPECT_EQ(load_grid(dir / "std.json").size(), 64u);
  write_file_atomic(dir / "g.json", R"({"n_neighbors":[5,10],"min_dist":[0.0],"min_cluster_size":[10,20,30]})");
  EXPECT_EQ(load_grid(dir / "g.json").size(), 6u);
  write_file_atomic(dir / "bad.json", R"({"n_neighbors":[5]})");
  EXPECT_THROW(load_grid(dir / "bad.json"), ConfigError);
}

TEST(Staleness, MissingUpstreamNamesTheStage) {
  const auto out = toy::fresh_dir("missing_upstream");
  auto p = toy::make(out);
  try {
    p.run(Stage::lda);
    FAIL() << "expected StaleInputError";
  } catch (const StaleInputError& e) {
    EXPECT_EQ(e.stage, "ingest");
    EXPECT_NE(std::string(e.what()).find("crisis-topics ingest"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(out / "lda_model.bin"));
}

class ToyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = toy::fresh_dir("full");
    toy::make(dir_).run_all();
  }
  static fs::path dir_;
};
fs::path ToyRun::dir_;

TEST_F(ToyRun, ManifestHasEveryStageWithMatchingHashes) {
  const auto m = Manifest::load(dir_);
  ASSERT_EQ(m.stages.size(), 8u);
  for (Stage s : all_stages()) {
    const auto& rec = m.stages.at(to_string(s));
    EXPECT_EQ(rec.outputs.size(), stage_outputs(s).size()) << to_string(s);
    for (const auto& [f, h] : rec.outputs) EXPECT_EQ(hex64(file_hash(dir_ / f)), h) << f;
    for (Stage d : dependencies(s)) EXPECT_EQ(rec.inputs.at(to_string(d)), m.stages.at(to_string(d)).digest());
    EXPECT_EQ(rec.seed, 42u);
    EXPECT_FALSE(rec.completed_at.empty());
  }
}

TEST_F(ToyRun, ArtifactsAreSane) {
  const auto stats = nlohmann::json::parse(read_file(dir_ / "ingest_stats.json"));
  EXPECT_EQ(stats.at("posts_kept").get<int>() + stats.at("comments_kept").get<int>(), 200);
  const auto clusters = read_clusters(dir_);
  EXPECT_EQ(clusters.doc_ids.size(), 160u);
  const auto topics = read_topics(dir_);
  EXPECT_GE(topics.size(), 2u);
  for (const auto& t : topics) EXPECT_FALSE(t.keywords.empty());
  const auto labels = nlohmann::json::parse(read_file(dir_ / "topic_labels.json"));
  EXPECT_EQ(labels.at("comments").size(), topics.size());
  EXPECT_EQ(labels.at("posts").size(), 3u);
  for (const auto& f : analytics::report_files()) EXPECT_TRUE(fs::exists(dir_ / "analytics" / f)) << f;
}

TEST_F(ToyRun, EveryInstanceCarriesAnSaLabel) {
  std::istringstream in(read_file(dir_ / "instance_labels.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto l = nlohmann::json::parse(line).get<schema::InstanceLabels>();
    EXPECT_FALSE(l.sa.empty()) << l.instance_id;
    ++n;
  }
  EXPECT_EQ(n, 200u);
}

TEST_F(ToyRun, RerunIsByteIdentical) {
  const auto other = toy::fresh_dir("full_rerun");
  toy::make(other).run_all();
  EXPECT_EQ(toy::artifact_hashes(dir_), toy::artifact_hashes(other));
  const auto a = Manifest::load(dir_), b = Manifest::load(other);
  for (const auto& [name, rec] : a.stages) EXPECT_EQ(rec.outputs, b.stages.at(name).outputs) << name;
}

TEST_F(ToyRun, RerunningAnalyzeKeepsItsHashes) {
  const auto before = Manifest::load(dir_).stages.at("analyze").outputs;
  toy::make(dir_).run(Stage::analyze);
  EXPECT_EQ(Manifest::load(dir_).stages.at("analyze").outputs, before);
}

TEST(Staleness, EditedArtifactIsDetected) {
  const auto out = toy::fresh_dir("edited");
  auto p = toy::make(out);
  p.run(Stage::ingest);
  std::ofstream(out / "clean.jsonl", std::ios::app) << "\n";
  try {
    p.run(Stage::lda);
    FAIL() << "expected StaleInputError";
  } catch (const StaleInputError& e) {
    EXPECT_EQ(e.stage, "ingest");
  }
  p.run(Stage::ingest);
  EXPECT_NO_THROW(p.run(Stage::lda));
}

TEST(Staleness, RebuiltUpstreamInvalidatesDownstream) {
  const auto out = toy::fresh_dir("rebuilt");
  auto cfg_json = nlohmann::json::parse(read_file(toy::config_path()));
  const auto base = toy::config_path().parent_path();
  Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::ingest);
  Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::embed);
  Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::cluster);
  cfg_json["embed"]["dims"] = 64;
  Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::embed);
  try {
    Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::represent);
    FAIL() << "expected StaleInputError";
  } catch (const StaleInputError& e) {
    EXPECT_EQ(e.stage, "cluster");
  }
}

TEST(Map, OverrideFileReplacesTopicLabels) {
  const auto out = toy::fresh_dir("override");
  auto p = toy::make(out);
  p.run_all();
  write_file_atomic(out / "overrides.json",
                    R"({"0": {"sa": ["recovery"], "cn": ["renewal"], "grief": true, "mental_health": false}})");
  p.run(Stage::map);
  const auto labels = nlohmann::json::parse(read_file(out / "topic_labels.json"));
  for (const auto& row : labels.at("comments")) {
    if (row.at("topic_id") != 0) continue;
    const auto fin = row.at("final").get<schema::TopicLabelSet>();
    EXPECT_EQ(fin.sa, schema::LabelSet{"recovery"});
    EXPECT_EQ(fin.cn, schema::LabelSet{"renewal"});
    EXPECT_TRUE(fin.grief);
    EXPECT_EQ(fin.provenance, schema::Provenance::human);
  }
  EXPECT_FALSE(Manifest::load(out).stages.at("map").config.at("overrides_hash").get<std::string>().empty());
  // analyze can run, but its recorded outputs came from the previous map
  EXPECT_NO_THROW(p.check_upstream(Stage::analyze));
  EXPECT_THROW(p.check_current(Stage::analyze), StaleInputError);
  p.run(Stage::analyze);
  EXPECT_NO_THROW(p.check_current(Stage::analyze));
}

TEST(Map, InvalidOverrideIsASchemaError) {
  const auto out = toy::fresh_dir("bad_override");
  auto p = toy::make(out);
  for (Stage s : {Stage::ingest, Stage::lda, Stage::embed, Stage::cluster, Stage::represent}) p.run(s);
  write_file_atomic(out / "overrides.json", R"({"0": {"sa": [], "cn": []}})");
  EXPECT_THROW(p.run(Stage::map), SchemaError);
}

TEST(Analyze, BadDenominatorIsAConfigError) {
  const auto out = toy::fresh_dir("bad_denominator");
  auto cfg_json = nlohmann::json::parse(read_file(toy::config_path()));
  const auto base = toy::config_path().parent_path();
  Pipeline(PipelineConfig(cfg_json, base), out).run_all();
  cfg_json["analyze"]["denominator"] = "posts";
  EXPECT_THROW(Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::analyze), ConfigError);
  cfg_json["analyze"]["denominator"] = "cn_labeled";
  cfg_json["analyze"]["time_zone"] = "Mars/Olympus";
  EXPECT_THROW(Pipeline(PipelineConfig(cfg_json, base), out).run(Stage::analyze), ConfigError);
}

TEST(Lda, TopicRangeSweepWritesScores) {
  const auto out = toy::fresh_dir("lda_range");
  auto cfg_json = nlohmann::json::parse(read_file(toy::config_path()));
  cfg_json["lda"]["topic_range"] = {2, 4};
  Pipeline p(PipelineConfig(cfg_json, toy::config_path().parent_path()), out);
  p.run(Stage::ingest);
  p.run(Stage::lda);
  std::istringstream csv(read_file(out / "lda_sweep.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "num_topics,coherence");
  const auto best = Manifest::load(out).stages.at("lda").config.at("num_topics").get<int>();
  EXPECT_GE(best, 2);
  EXPECT_LE(best, 4);
}

TEST(Sweep, GridOverToyEmbeddings) {
  const auto out = toy::fresh_dir("sweep");
  auto p = toy::make(out);
  p.run(Stage::ingest);
  p.run(Stage::embed);
  sweep::SweepGrid g;
  g.n_neighbors = {10};
  g.min_dist = {0.0};
  g.min_cluster_size = {10, 20};
  const auto r = p.run_sweep(g);
  ASSERT_EQ(r.scores.size(), 2u);
  ASSERT_TRUE(r.best.has_value());
  const auto best = nlohmann::json::parse(read_file(out / "sweep_best.json"));
  EXPECT_EQ(best.at("configurations"), 2);
  EXPECT_TRUE(fs::exists(out / "sweep_scores.csv"));
}
