// Acceptance gate. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when any gating criterion fails. The dataset tier runs only when
// CRISIS_DATASET_DIR points at the released corpus.

#include "crisis/analytics.hpp"
#include "crisis/coherence.hpp"
#include "crisis/hdbscan.hpp"
#include "crisis/lda.hpp"
#include "crisis/pipeline.hpp"
#include "crisis/reduce.hpp"
#include "crisis/represent.hpp"
#include "crisis/schema.hpp"
#include "crisis/sweep.hpp"

#include "blob_fixtures.hpp"
#include "lda_fixtures.hpp"
#include "oracles.hpp"
#include "toy_fixture.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace crisis;
namespace fs = std::filesystem;
using Tokens = std::vector<std::vector<std::string>>;

namespace tol {
constexpr double kPlantedPurity = 0.90;
constexpr double kTrustworthiness = 0.80;
constexpr double kRandomBaseline = 0.5;
constexpr double kRandomBaselineSlack = 0.05;
constexpr double kCtfidf = 1e-9;
constexpr double kFireWeightPublished = 1.6219;
constexpr double kFireWeightDigits = 1e-4;
constexpr double kIdenticalWords = 1e-9;
constexpr double kNightSegment = 0.10;
constexpr double kCoherenceReference = 0.628;
constexpr double kCoherenceSlack = 0.05;
constexpr int kLdaOptimum = 9;
constexpr int kLdaSlack = 2;
}  // namespace tol

namespace {

enum class Outcome { pass, fail, skip };

struct Result {
  Outcome outcome = Outcome::pass;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  Result done(const std::string& summary) const {
    if (failed_ == 0) return {Outcome::pass, summary};
    std::string d = std::to_string(failed_) + " failed check(s): ";
    for (std::size_t i = 0; i < failures_.size(); ++i) d += (i ? "; " : "") + failures_[i];
    return {Outcome::fail, d};
  }

 private:
  std::vector<std::string> failures_;
  std::size_t failed_ = 0;
};

std::string fmt(double v, int digits = 4) { return format_fixed(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Mandatory tier

Result lda_planted_recovery() {
  Check c;
  const auto planted = testing::make_planted_corpus(1, 500);
  lda::LdaConfig cfg;
  cfg.num_topics = 2;
  cfg.iterations = 200;
  cfg.burn_in = 50;
  cfg.seed = 7;
  std::size_t sweeps = 0, violations = 0;
  const auto model = lda::train_lda(planted.corpus, cfg, [&](int, const lda::LdaModel& m) {
    ++sweeps;
    if (!lda::check_count_invariants(m, planted.corpus).empty()) ++violations;
  });
  c.expect(sweeps == 200, "expected 200 sweeps, saw " + std::to_string(sweeps));
  c.expect(violations == 0, std::to_string(violations) + " sweeps broke count conservation");
  double worst = 1.0;
  std::set<int> dominant_blocks;
  for (int k = 0; k < 2; ++k) {
    std::map<int, int> per_block;
    for (const auto& w : lda::top_words(model, k, 10)) ++per_block[w[1] - '0'];
    const auto best = std::max_element(per_block.begin(), per_block.end(),
                                       [](auto& a, auto& b) { return a.second < b.second; });
    dominant_blocks.insert(best->first);
    worst = std::min(worst, best->second / 10.0);
  }
  c.expect(worst >= tol::kPlantedPurity, "top-10 purity " + fmt(worst, 2));
  c.expect(dominant_blocks.size() == 2, "both topics collapsed onto one block");
  const auto again = lda::train_lda(planted.corpus, cfg);
  c.expect(again.assignments == model.assignments && again.topic_word == model.topic_word, "rerun differs");
  return c.done("min top-10 purity " + fmt(worst, 2) + ", invariants held on " + std::to_string(sweeps) +
                " sweeps, rerun bit-identical");
}

Result hdbscan_oracle_equivalence() {
  Check c;
  std::size_t clusters = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t n = 50 + (seed * 37) % 151;
    const auto x = testing::make_uniform(seed + 1000, n, 2);
    const std::size_t mcs = 5 + seed % 4 * 5, ms = std::min<std::size_t>(1 + seed % 5, mcs);
    const auto a = hdbscan::cluster(x, {mcs, ms});
    clusters += a.num_clusters;
    c.expect(testing::same_partition(a.labels, testing::density_cluster_oracle(x, mcs, ms)),
             "dataset " + std::to_string(seed) + " (n=" + std::to_string(n) + ") disagrees");
  }
  return c.done("50/50 datasets (n 50..200) match the brute-force oracle, " + std::to_string(clusters) +
                " clusters total");
}

Result reducer_quality() {
  Check c;
  const auto x = testing::make_blobs(1, 3, 100, 50, 0.1);
  reduce::ReducerConfig cfg;
  cfg.n_neighbors = 15;
  cfg.min_dist = 0.01;
  cfg.seed = 7;
  const auto r = reduce::reduce(x, cfg);
  const double t = testing::trustworthiness(testing::to_double(x), r.embedding, 15);
  DenseMatrix<double> random_layout(300, 5);
  auto rng = make_stream(5);
  for (auto& v : random_layout.data()) v = uniform01(rng);
  const double base = testing::trustworthiness(testing::to_double(x), random_layout, 15);
  c.expect(t >= tol::kTrustworthiness, "trustworthiness " + fmt(t));
  c.expect(std::abs(base - tol::kRandomBaseline) <= tol::kRandomBaselineSlack, "random baseline " + fmt(base));
  c.expect(reduce::reduce(x, cfg).embedding == r.embedding, "rerun differs");
  return c.done("trustworthiness(k=15) " + fmt(t) + " vs random " + fmt(base) + ", rerun bit-identical");
}

Result ctfidf_hand_oracle() {
  Check c;
  const Tokens hand = {{"fire", "fire", "smoke"}, {"water", "flood"}};
  const std::vector<int> hand_labels = {0, 1};
  const auto m = represent::ctfidf(hand, hand_labels, {1, 1, 1});
  const double fire = m.weight(0, "fire");
  c.expect(std::abs(fire - 2.0 * std::log(1.0 + 2.5 / 2.0)) <= tol::kCtfidf, "W[c1,fire] = " + fmt(fire, 12));
  c.expect(std::abs(fire - tol::kFireWeightPublished) <= tol::kFireWeightDigits, "W[c1,fire] = " + fmt(fire, 6));
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto rng = make_stream(seed, 505u);
    const std::size_t classes = 1 + uniform_index(rng, 5);
    Tokens docs;
    std::vector<int> labels;
    for (std::size_t d = 0; d < 25; ++d) {
      std::vector<std::string> t;
      const auto len = 1 + uniform_index(rng, 8);
      for (std::size_t i = 0; i < len; ++i) t.push_back("w" + std::to_string(uniform_index(rng, 6)));
      docs.push_back(t);
      labels.push_back(static_cast<int>(uniform_index(rng, classes)));
    }
    const std::size_t min_df = 1 + seed % 3;
    const auto w = represent::ctfidf(docs, labels, {1, 2, min_df});
    const auto oracle = testing::ctfidf_oracle(docs, labels, min_df);
    for (std::size_t k = 0; k < w.class_ids.size(); ++k)
      for (std::size_t t = 0; t < w.terms.size(); ++t) {
        const auto it = oracle.find({w.class_ids[k], w.terms[t]});
        worst = std::max(worst, std::abs(w.weights(k, t) - (it == oracle.end() ? 0.0 : it->second)));
      }
  }
  c.expect(worst <= tol::kCtfidf, "max deviation " + sci(worst));
  return c.done("W[c1,fire] = " + fmt(fire, 6) + ", 30 random corpora (<=5 classes) max deviation " +
                sci(worst));
}

Result cv_properties() {
  Check c;
  const Tokens one = {{"smoke", "ash"}, {"smoke"}};
  const std::vector<std::vector<std::string>> same = {std::vector<std::string>(10, "smoke")};
  const double ident = *coherence::cv_coherence(same, one).per_topic[0].score;
  c.expect(std::abs(ident - 1.0) <= tol::kIdenticalWords, "identical-word score " + fmt(ident, 12));

  const Tokens six = {{"a", "b", "c"}, {"a", "b", "c"}, {"a", "b", "c"}, {"x"}, {"y"}, {"z"}};
  coherence::CoherenceConfig cfg;
  cfg.top_n = 3;
  const auto r = coherence::cv_coherence({{"a", "b", "c"}, {"x", "y", "z"}}, six, cfg);
  const double together = *r.per_topic[0].score, apart = *r.per_topic[1].score;
  c.expect(together > apart, "co-occurring " + fmt(together) + " <= disjoint " + fmt(apart));

  auto rng = make_stream(3);
  Tokens docs;
  for (int d = 0; d < 40; ++d) {
    std::vector<std::string> t;
    for (int i = 0; i < 15; ++i) t.push_back("w" + std::to_string(uniform_index(rng, 12)));
    docs.push_back(t);
  }
  const auto stats = coherence::WindowStats::build(docs, 4);
  std::size_t bad = 0;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      const auto a = "w" + std::to_string(i), b = "w" + std::to_string(j);
      const double v = coherence::npmi(a, b, stats);
      if (v != coherence::npmi(b, a, stats) || v < -1.0 || v > 1.0) ++bad;
    }
  c.expect(bad == 0, std::to_string(bad) + " NPMI pairs asymmetric or out of [-1, 1]");

  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = make_stream(seed, 606u);
    Tokens corpus;
    for (int d = 0; d < 20; ++d) {
      std::vector<std::string> t;
      for (std::size_t i = 0, n = 2 + uniform_index(g, 15); i < n; ++i) t.push_back("w" + std::to_string(uniform_index(g, 10)));
      corpus.push_back(t);
    }
    std::vector<std::string> words;
    for (int i = 0; i < 5; ++i) words.push_back("w" + std::to_string(i * 2));
    coherence::CoherenceConfig wc;
    wc.window_size = 4;
    const auto rep = coherence::cv_coherence({words}, corpus, wc);
    if (rep.per_topic[0].score)
      worst = std::max(worst, std::abs(*rep.per_topic[0].score - testing::cv_oracle(words, corpus, 4, wc.epsilon)));
  }
  c.expect(worst <= 1e-12, "brute-force C_v deviation " + sci(worst));
  return c.done("identical words " + fmt(ident, 12) + ", co-occurring " + fmt(together) + " > disjoint " +
                fmt(apart) + ", NPMI symmetric and bounded on 144 pairs, brute-force C_v deviation " + sci(worst));
}

Result mmr_checks() {
  Check c;
  const std::vector<represent::MmrCandidate> trace = {{"a", 0.9}, {"b", 0.8}, {"c", 0.5}, {"d", 0.3}};
  const DenseMatrix<float> trace_vecs(4, 2, {1, 0, 0.8f, 0.6f, 0, 1, -1, 0});
  c.expect(represent::mmr_select(trace, trace_vecs, 0.5, 4) == std::vector<std::string>{"a", "d", "c", "b"},
           "hand trace order");
  const std::vector<represent::MmrCandidate> rel = {{"x", 0.2}, {"y", 0.9}, {"z", 0.5}, {"w", 0.9}};
  const DenseMatrix<float> rel_vecs(4, 2, {1, 0, 1, 0, 0, 1, 0.6f, 0.8f});
  c.expect(represent::mmr_select(rel, rel_vecs, 1.0, 10) == std::vector<std::string>{"y", "w", "z", "x"},
           "lambda 1 is not a relevance sort");
  const std::vector<represent::MmrCandidate> dup = {{"fire", 1.0}, {"fires", 0.99}, {"rain", 0.01}};
  const DenseMatrix<float> dup_vecs(3, 2, {1, 0, 1, 0, 0.99f, 0.141f});
  c.expect(represent::mmr_select(dup, dup_vecs, 0.5, 2) == std::vector<std::string>{"fire", "rain"},
           "duplicate embedding not suppressed");
  return c.done("hand trace a,d,c,b; lambda=1 relevance order; duplicate suppressed");
}

Result sweep_harness() {
  Check c;
  const auto points = sweep::enumerate(sweep::SweepGrid::standard());
  c.expect(points.size() == 64, "standard grid has " + std::to_string(points.size()) + " points");
  for (const auto& p : points)
    c.expect(p.min_samples == p.min_cluster_size / 2, "min_samples at mcs " + std::to_string(p.min_cluster_size));
  const auto x = testing::make_blobs(3, 3, 30, 6, 0.3);
  sweep::SweepGrid grid{{10, 15}, {0.0, 0.01}, {10, 20}};
  reduce::ReducerConfig base;
  base.epochs = 30;
  const sweep::GridPoint target{15, 0.01, 10, 5};
  const auto result = sweep::sweep_grid(
      x, grid, base,
      [&](const sweep::GridPoint& p, const hdbscan::ClusterAssignment&) { return p == target ? 1.0 : 0.1; }, {}, 4);
  c.expect(result.best && result.scores[*result.best].point == target, "injected argmax not returned");
  return c.done("64 configurations, min_samples = floor(mcs/2) everywhere, injected argmax selected");
}

Result upset_bijection() {
  Check c;
  const auto& family = schema::sa_categories();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rng = make_stream(seed, 4321u);
    const std::size_t n = 1 + uniform_index(rng, 1000);
    std::vector<schema::LabelSet> labels(n);
    for (auto& l : labels)
      for (const auto& cat : family)
        if (uniform01(rng) < 0.3) l.insert(cat);
    const auto t = analytics::upset_intersections(labels, family);
    std::vector<std::size_t> rebuilt(family.size(), 0);
    bool ok = true;
    for (unsigned mask = 1; mask < (1u << family.size()); ++mask) {
      schema::LabelSet subset;
      for (std::size_t k = 0; k < family.size(); ++k)
        if (mask & (1u << k)) subset.insert(family[k]);
      const auto brute = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), subset));
      ok = ok && t.exclusive_count(subset) == brute;
      for (std::size_t k = 0; k < family.size(); ++k)
        if (mask & (1u << k)) rebuilt[k] += t.exclusive_count(subset);
    }
    c.expect(ok, "exclusive counts differ on dataset " + std::to_string(seed));
    c.expect(rebuilt == t.set_sizes, "set sizes not reconstructed on dataset " + std::to_string(seed));
  }
  return c.done("50 random datasets (n <= 1000): exclusive counts match brute force, set sizes reconstructed");
}

Result schema_propagation() {
  Check c;
  const fs::path data = CRISIS_DATA_DIR, fixtures = CRISIS_FIXTURE_DIR;
  const auto sch = schema::load_schema(data / "schema.json");
  const auto rules = schema::load_rules(data / "rules.json", sch);
  const auto lex = schema::Lexicons::load(data / "lexicons" / "grief.txt", data / "lexicons" / "mental_health.txt");
  const auto mapped = nlohmann::json::parse(read_file(fixtures / "mapped_topics.json"));
  std::vector<schema::TopicLabelSet> automatic;
  for (const auto& t : mapped)
    automatic.push_back(schema::label_topic(t["topic_id"].get<int>(), t["keywords"].get<std::vector<std::string>>(),
                                            t["label"].get<std::string>(), {}, rules, sch, lex));
  const auto overrides = schema::load_overrides(fixtures / "human_mapping.json", sch);
  const auto fin = schema::apply_review(automatic, overrides);
  std::map<int, schema::TopicLabelSet> by_id;
  for (const auto& t : fin) by_id[t.topic_id] = t;
  const auto& t3 = by_id[3];
  c.expect(t3.sa == schema::LabelSet{"public_health_safety", "emergency_resources", "recovery", "loss_damage"} &&
               t3.cn == schema::LabelSet{"victim", "blame", "renewal"} && t3.grief && t3.mental_health,
           "topic 3 mapping");
  const auto& t24 = by_id[24];
  c.expect(t24.sa == schema::LabelSet{"public_health_safety", "emergency_resources", "loss_damage"} &&
               t24.cn == schema::LabelSet{"blame", "victim"} && !t24.grief && !t24.mental_health,
           "topic 24 mapping");
  c.expect(schema::apply_review(fin, overrides) == fin, "apply_review not idempotent");

  using ingest::RecordKind;
  std::size_t inherited = 0, checked = 0;
  const auto& sa = schema::sa_categories();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rng = make_stream(seed, 77u);
    std::map<int, schema::TopicLabelSet> posts, comments;
    for (int t = 0; t < 4; ++t) {
      posts[t].topic_id = t;
      posts[t].sa = {sa[uniform_index(rng, sa.size())]};
    }
    for (int t = 0; t < 5; ++t)
      if (uniform01(rng) < 0.7) {
        comments[t].topic_id = t;
        comments[t].sa = {sa[uniform_index(rng, sa.size())]};
        comments[t].cn = {"victim"};
      }
    std::vector<schema::InstanceRef> in;
    const std::size_t n_posts = 1 + uniform_index(rng, 6);
    for (std::size_t p = 0; p < n_posts; ++p)
      in.push_back({"p" + std::to_string(p), RecordKind::post, static_cast<int>(uniform_index(rng, 4)), std::nullopt});
    for (int k = 0; k < 40; ++k)
      in.push_back({"c" + std::to_string(k), RecordKind::comment, static_cast<int>(uniform_index(rng, 6)) - 1,
                    "t3_p" + std::to_string(uniform_index(rng, n_posts + 2))});
    const auto r = schema::propagate_labels(in, posts, comments);
    std::map<std::string, const schema::InstanceLabels*> by_instance;
    for (const auto& l : r.labels) by_instance[l.instance_id] = &l;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto& l = r.labels[i];
      ++checked;
      c.expect(!l.sa.empty(), "instance without SA label");
      if (in[i].kind != RecordKind::comment || comments.count(in[i].topic_id)) continue;
      c.expect(l.inherited, "noise comment not inherited");
      ++inherited;
      const auto parent = by_instance.find(ingest::strip_thing_prefix(*in[i].link_id));
      if (parent != by_instance.end()) c.expect(l.sa == parent->second->sa, "inherited SA differs from parent");
    }
  }
  return c.done("topic 3 and 24 reproduced from the human mapping fixture, apply_review idempotent, " +
                std::to_string(checked) + " instances SA-total, " + std::to_string(inherited) + " noise comments inherited");
}

Result toy_end_to_end() {
  Check c;
  const auto a = toy::fresh_dir("acceptance_a"), b = toy::fresh_dir("acceptance_b");
  toy::make(a).run_all();
  toy::make(b).run_all();
  const auto m = pipeline::Manifest::load(a);
  c.expect(m.stages.size() == 8, "manifest has " + std::to_string(m.stages.size()) + " stages");
  for (auto s : pipeline::all_stages()) {
    const auto it = m.stages.find(pipeline::to_string(s));
    if (it == m.stages.end()) continue;
    for (const auto& [f, h] : it->second.outputs) c.expect(hex64(file_hash(a / f)) == h, f + " hash mismatch");
  }
  try {
    toy::make(a).check_current(pipeline::Stage::analyze);
  } catch (const std::exception& e) {
    c.expect(false, e.what());
  }
  const auto ha = toy::artifact_hashes(a), hb = toy::artifact_hashes(b);
  c.expect(ha == hb, "rerun artifacts differ");
  return c.done("8 stage entries, " + std::to_string(ha.size()) + " artifacts byte-identical on rerun");
}

// ---------------------------------------------------------------------------
// Dataset tier

std::optional<fs::path> dataset_dir() {
  const char* d = std::getenv("CRISIS_DATASET_DIR");
  if (!d || !*d) return std::nullopt;
  return fs::path(d);
}

Result skip(const std::string& why) { return {Outcome::skip, why}; }

ingest::IngestResult ingest_dataset(const fs::path& dir) {
  const fs::path data = pipeline::PipelineConfig::data_dir();
  const auto load = ingest::load_corpus(dir / "corpus.jsonl", {true, std::nullopt});
  const auto emoji = ingest::EmojiTable::load(data / "emoji.tsv");
  const auto tok = ingest::TokenizerConfig::with_stopword_file(data / "stopwords_en.txt");
  return ingest::preprocess_corpus(load.records, emoji, tok, 10);
}

Result dataset_preprocessing() {
  const auto dir = dataset_dir();
  if (!dir) return skip("CRISIS_DATASET_DIR not set");
  if (!fs::exists(*dir / "corpus.jsonl")) return skip("corpus.jsonl not found in CRISIS_DATASET_DIR");
  Check c;
  const auto r = ingest_dataset(*dir);
  c.expect(r.stats.posts_kept == 373 && r.stats.posts_in == 385,
           "posts " + std::to_string(r.stats.posts_kept) + "/" + std::to_string(r.stats.posts_in));
  c.expect(r.stats.unique_urls == 1002, "unique URLs " + std::to_string(r.stats.unique_urls));
  return c.done("373/385 posts retained, 1002 unique URLs");
}

Result dataset_released_labels() {
  const auto dir = dataset_dir();
  if (!dir) return skip("CRISIS_DATASET_DIR not set");
  if (!fs::exists(*dir / "corpus.jsonl") || !fs::exists(*dir / "labels.jsonl"))
    return skip("corpus.jsonl or labels.jsonl not found in CRISIS_DATASET_DIR");
  Check c;
  const auto ingested = ingest_dataset(*dir);
  std::map<std::string, const ingest::CleanDoc*> docs;
  for (const auto& d : ingested.docs) docs[d.id] = &d;
  std::vector<analytics::LabeledInstance> xs;
  std::istringstream in(read_file(*dir / "labels.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto l = nlohmann::json::parse(line).get<schema::InstanceLabels>();
    const auto it = docs.find(l.instance_id);
    if (it == docs.end()) continue;
    xs.push_back({l.instance_id, it->second->created_utc, it->second->subreddit, it->second->tokens, l.sa, l.cn,
                  l.grief, l.mental_health});
  }
  const fs::path data = pipeline::PipelineConfig::data_dir();
  const auto report = analytics::analyze(xs, ingested.all_mentions, schema::load_schema(data / "schema.json"),
                                         analytics::FireMap::load(data / "fire_map.json"),
                                         read_word_list(data / "health_domains.txt"));
  auto expect_count = [&](const std::string& what, std::size_t got, std::size_t want) {
    c.expect(got == want, what + " " + std::to_string(got) + " (want " + std::to_string(want) + ")");
  };
  expect_count("SA public_health_safety", report.upset_sa.set_size("public_health_safety"), 24832);
  expect_count("SA {public_health_safety} only", report.upset_sa.exclusive_count({"public_health_safety"}), 24);
  expect_count("SA {public_health_safety,fire_operations}",
               report.upset_sa.exclusive_count({"public_health_safety", "fire_operations"}), 1219);
  expect_count("CN victim", report.upset_cn.set_size("victim"), 35369);
  expect_count("CN {victim,blame}", report.upset_cn.exclusive_count({"victim", "blame"}), 11489);
  expect_count("CN {renewal,blame,victim}", report.upset_cn.exclusive_count({"renewal", "blame", "victim"}), 12928);
  expect_count("grief", report.grief, 26257);
  expect_count("mental_health", report.mental_health, 19683);
  const std::map<std::string, std::size_t> fires = {
      {"eaton_only", 17210}, {"palisades_only", 26038}, {"both", 28648}, {"other", 5298}};
  for (const auto& [cls, n] : report.fires.counts)
    if (fires.count(cls)) expect_count("fire class " + cls, n, fires.at(cls));
  for (const auto& day : report.timeseries.days)
    if (day.date >= "2025-01-08" && day.date <= "2025-01-10")
      c.expect(day.total >= 6000 && day.total <= 9000, "CN total on " + day.date + " = " + std::to_string(day.total));
  for (const auto& s : report.segments.segments)
    if (s.name == "night")
      c.expect(std::abs(static_cast<double>(s.total) - 20000.0) <= tol::kNightSegment * 20000.0,
               "night segment total " + std::to_string(s.total));
  for (const auto& [cat, domains] : report.urls.per_category)
    if (cat == "fire_operations")
      c.expect(!domains.empty() && domains.front().domain == "watchduty.org",
               "fire_operations top URL " + (domains.empty() ? std::string("none") : domains.front().domain));
  return c.done("released-label counts, fire partition, daily and night totals, top URL all match");
}

Result dataset_sweep_reference() {
  const auto dir = dataset_dir();
  if (!dir) return skip("CRISIS_DATASET_DIR not set");
  if (!fs::exists(*dir / "config.json")) return skip("config.json (with an external embedding provider) not found");
  Check c;
  auto cfg_json = nlohmann::json::parse(read_file(*dir / "config.json"));
  cfg_json["lda"]["topic_range"] = {5, 30};
  const auto out = fs::temp_directory_path() / "crisis_acceptance_dataset";
  pipeline::Pipeline p(pipeline::PipelineConfig(cfg_json, *dir), out);
  for (auto s : {pipeline::Stage::ingest, pipeline::Stage::lda, pipeline::Stage::embed}) p.run(s);
  const int k = pipeline::Manifest::load(out).stages.at("lda").config.at("num_topics").get<int>();
  c.expect(std::abs(k - tol::kLdaOptimum) <= tol::kLdaSlack, "LDA optimum " + std::to_string(k));
  const auto sweep = p.run_sweep(sweep::SweepGrid::standard(), 4);
  const double best = sweep.best ? *sweep.scores[*sweep.best].coherence : 0.0;
  c.expect(sweep.best && std::abs(best - tol::kCoherenceReference) <= tol::kCoherenceSlack,
           "best comment coherence " + fmt(best));
  return c.done("LDA optimum " + std::to_string(k) + ", best comment coherence " + fmt(best));
}

struct Criterion {
  std::string name;
  bool gating;
  std::function<Result()> run;
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria = {
      {"lda-planted-topic-recovery", true, lda_planted_recovery},
      {"hdbscan-oracle-equivalence", true, hdbscan_oracle_equivalence},
      {"reducer-quality", true, reducer_quality},
      {"ctfidf-hand-oracle", true, ctfidf_hand_oracle},
      {"cv-properties", true, cv_properties},
      {"mmr", true, mmr_checks},
      {"sweep-harness", true, sweep_harness},
      {"upset-bijection", true, upset_bijection},
      {"schema-propagation", true, schema_propagation},
      {"toy-end-to-end", true, toy_end_to_end},
      {"dataset-preprocessing", true, dataset_preprocessing},
      {"dataset-released-labels", true, dataset_released_labels},
      {"dataset-sweep-reference (non-gating)", false, dataset_sweep_reference},
  };
  int gating_failures = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Result r;
    try {
      r = cr.run();
    } catch (const std::exception& e) {
      r = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = r.outcome == Outcome::pass ? "PASS" : r.outcome == Outcome::fail ? "FAIL" : "SKIP";
    std::cout << tag << "  " << cr.name << ": " << r.detail << " [" << format_fixed(secs, 1) << "s]\n";
    if (r.outcome == Outcome::fail && cr.gating) ++gating_failures;
  }
  std::cout << (gating_failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED") << " (" << gating_failures
            << " gating failure(s))\n";
  return gating_failures ? 1 : 0;
}
