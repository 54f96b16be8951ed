#pragma once

// Stage orchestration. Each stage reads upstream artifacts from the output
// directory, writes its own, and records content hashes in manifest.json.
// A stage refuses to run when any upstream artifact no longer matches the
// hash recorded when it was produced.

#include "crisis/analytics.hpp"
#include "crisis/coherence.hpp"
#include "crisis/embed.hpp"
#include "crisis/hdbscan.hpp"
#include "crisis/ingest.hpp"
#include "crisis/lda.hpp"
#include "crisis/reduce.hpp"
#include "crisis/represent.hpp"
#include "crisis/schema.hpp"
#include "crisis/sweep.hpp"

#include <absl/time/clock.h>
#include <json.hpp>

#include <map>
#include <optional>

#ifndef CRISIS_DATA_DIR
#define CRISIS_DATA_DIR "data"
#endif

namespace crisis::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

enum class Stage { ingest, lda, embed, cluster, represent, coherence, map, analyze };

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"ingest",    "lda",       "embed", "cluster",
                                                 "represent", "coherence", "map",   "analyze"};
  return names;
}

inline std::string to_string(Stage s) { return stage_names()[static_cast<std::size_t>(s)]; }

inline Stage parse_stage(std::string_view name) {
  const auto& names = stage_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Stage>(i);
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

inline std::vector<Stage> all_stages() {
  return {Stage::ingest, Stage::lda, Stage::embed, Stage::cluster,
          Stage::represent, Stage::coherence, Stage::map, Stage::analyze};
}

// Direct upstream stages.
inline std::vector<Stage> dependencies(Stage s) {
  switch (s) {
    case Stage::ingest: return {};
    case Stage::lda: return {Stage::ingest};
    case Stage::embed: return {Stage::ingest};
    case Stage::cluster: return {Stage::embed};
    case Stage::represent: return {Stage::ingest, Stage::cluster};
    case Stage::coherence: return {Stage::ingest, Stage::lda, Stage::represent};
    case Stage::map: return {Stage::ingest, Stage::lda, Stage::represent};
    case Stage::analyze: return {Stage::ingest, Stage::map};
  }
  return {};
}

inline std::vector<std::string> stage_outputs(Stage s) {
  switch (s) {
    case Stage::ingest: return {"clean.jsonl", "urls.jsonl", "ingest_stats.json"};
    case Stage::lda: return {"lda_model.bin", "lda_topics.json", "post_topics.json", "lda_sweep.csv"};
    case Stage::embed: return {"embeddings.emb", "embeddings.emb.ids"};
    case Stage::cluster: return {"clusters.json", "condensed_tree.json"};
    case Stage::represent: return {"topics.json"};
    case Stage::coherence: return {"coherence.json"};
    case Stage::map: return {"topic_labels.json", "instance_labels.jsonl", "map_stats.json"};
    case Stage::analyze: {
      std::vector<std::string> out;
      for (const auto& f : analytics::report_files()) out.push_back("analytics/" + f);
      return out;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Configuration

// JSON configuration with paths resolved against the file's directory. Data
// files default to the bundled data directory (CRISIS_DATA_DIR in the
// environment overrides the compiled-in location).
class PipelineConfig {
 public:
  PipelineConfig() : raw_(json::object()) {}
  PipelineConfig(json raw, fs::path base_dir) : raw_(std::move(raw)), base_(std::move(base_dir)) {
    if (!raw_.is_object()) throw ConfigError("configuration must be a JSON object");
  }

  static PipelineConfig load(const fs::path& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    try {
      return PipelineConfig(json::parse(text), fs::absolute(path).parent_path());
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> time_zone_override;

  const json& raw() const { return raw_; }

  json section(const std::string& name) const {
    const auto it = raw_.find(name);
    if (it == raw_.end() || it->is_null()) return json::object();
    if (!it->is_object()) throw ConfigError("config section '" + name + "' must be an object");
    return *it;
  }

  template <typename T>
  T get(const std::string& sec, const std::string& key, T fallback) const {
    const auto s = section(sec);
    const auto it = s.find(key);
    if (it == s.end() || it->is_null()) return fallback;
    try {
      return it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config " + sec + "." + key + " has the wrong type");
    }
  }

  std::uint64_t seed() const {
    if (seed_override) return *seed_override;
    try {
      return raw_.value("seed", std::uint64_t{42});
    } catch (const json::exception&) {
      throw ConfigError("config seed must be a non-negative integer");
    }
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_ / path;
  }

  static fs::path data_dir() {
    if (const char* env = std::getenv("CRISIS_DATA_DIR"); env && *env) return env;
    return CRISIS_DATA_DIR;
  }

  // A data file from `sec.key`, or the bundled default.
  fs::path data_file(const std::string& sec, const std::string& key, const fs::path& bundled) const {
    const auto v = get<std::string>(sec, key, "");
    return v.empty() ? data_dir() / bundled : resolve(v);
  }

  fs::path corpus() const {
    const auto c = raw_.value("corpus", std::string());
    if (c.empty()) throw ConfigError("config has no 'corpus' path");
    return resolve(c);
  }

 private:
  json raw_;
  fs::path base_;
};

// ---------------------------------------------------------------------------
// Manifest

struct StageRecord {
  std::map<std::string, std::string> outputs;  // file -> hex xxh64
  std::map<std::string, std::string> inputs;   // upstream stage -> digest
  json config = json::object();
  std::uint64_t seed = 0;
  std::string completed_at;

  // Digest of this stage's outputs, referenced by downstream records.
  std::string digest() const {
    std::string buf;
    for (const auto& [f, h] : outputs) buf += f + "=" + h + "\n";
    return hex64(xxhash64(buf));
  }
};

struct Manifest {
  std::map<std::string, StageRecord> stages;

  static fs::path path_in(const fs::path& dir) { return dir / "manifest.json"; }

  static Manifest load(const fs::path& dir) {
    Manifest m;
    const auto p = path_in(dir);
    if (!fs::exists(p)) return m;
    json j;
    try {
      j = json::parse(read_file(p));
      for (const auto& [name, r] : j.at("stages").items()) {
        StageRecord rec;
        rec.outputs = r.at("outputs").get<std::map<std::string, std::string>>();
        rec.inputs = r.at("inputs").get<std::map<std::string, std::string>>();
        rec.config = r.value("config", json::object());
        rec.seed = r.value("seed", std::uint64_t{0});
        rec.completed_at = r.value("completed_at", "");
        m.stages[name] = std::move(rec);
      }
    } catch (const json::exception& e) {
      throw FormatError("corrupt manifest " + p.string() + ": " + e.what());
    }
    return m;
  }

  json to_json_value() const {
    json st = json::object();
    for (const auto& [name, r] : stages)
      st[name] = {{"outputs", r.outputs},
                  {"inputs", r.inputs},
                  {"config", r.config},
                  {"seed", r.seed},
                  {"completed_at", r.completed_at}};
    return json{{"format", "crisis-topics-manifest/1"}, {"stages", st}};
  }

  void save(const fs::path& dir) const { write_file_atomic(path_in(dir), to_json_value().dump(2) + "\n"); }
};

// ---------------------------------------------------------------------------
// Artifact helpers

namespace detail {

inline void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline std::vector<std::string> ngram_stream(const std::vector<std::string>& tokens,
                                             const represent::VectorizerConfig& v) {
  return represent::ngrams(tokens, v.ngram_min, v.ngram_max);
}

inline std::string now_utc() {
  return absl::FormatTime("%Y-%m-%dT%H:%M:%SZ", absl::Now(), absl::UTCTimeZone());
}

template <typename T>
std::vector<T> read_jsonl(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<T> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::exception& e) {
      throw ParseError(p.string() + ": " + e.what(), n);
    }
  }
  return out;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& rows) {
  std::string out;
  for (const auto& r : rows) out += json(r).dump() + "\n";
  return out;
}

}  // namespace detail

struct ClusterArtifact {
  std::vector<std::string> doc_ids;
  std::vector<int> labels;
};

inline ClusterArtifact read_clusters(const fs::path& dir) {
  const auto j = detail::read_json(dir / "clusters.json");
  ClusterArtifact c;
  c.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
  c.labels = j.at("labels").get<std::vector<int>>();
  if (c.doc_ids.size() != c.labels.size()) throw FormatError("clusters.json: ids and labels differ in length");
  return c;
}

inline std::vector<represent::TopicRepresentation> read_topics(const fs::path& dir) {
  return detail::read_json(dir / "topics.json").get<std::vector<represent::TopicRepresentation>>();
}

inline represent::RepresentConfig represent_config(const PipelineConfig& cfg) {
  represent::RepresentConfig rc;
  rc.vectorizer.ngram_min = cfg.get<std::size_t>("represent", "ngram_min", 1);
  rc.vectorizer.ngram_max = cfg.get<std::size_t>("represent", "ngram_max", 2);
  rc.vectorizer.min_df = cfg.get<std::size_t>("represent", "min_df", 2);
  rc.candidates = cfg.get<std::size_t>("represent", "candidates", 30);
  rc.keywords = cfg.get<std::size_t>("represent", "keywords", 10);
  rc.mmr_lambda = cfg.get<double>("represent", "mmr_lambda", 0.4);
  rc.representative_docs = cfg.get<std::size_t>("represent", "representative_docs", 3);
  rc.vectorizer.validate();
  return rc;
}

inline coherence::CoherenceConfig coherence_config(const PipelineConfig& cfg) {
  coherence::CoherenceConfig c;
  c.window_size = cfg.get<std::size_t>("coherence", "window_size", 110);
  c.top_n = cfg.get<std::size_t>("coherence", "top_n", 10);
  c.validate();
  return c;
}

inline reduce::ReducerConfig reducer_config(const PipelineConfig& cfg) {
  reduce::ReducerConfig r;
  r.n_neighbors = cfg.get<std::size_t>("cluster", "n_neighbors", 15);
  r.min_dist = cfg.get<double>("cluster", "min_dist", 0.0);
  r.n_components = cfg.get<std::size_t>("cluster", "n_components", 5);
  r.epochs = cfg.get<int>("cluster", "epochs", 0);
  r.seed = cfg.seed();
  return r;
}

inline hdbscan::ClustererConfig clusterer_config(const PipelineConfig& cfg) {
  hdbscan::ClustererConfig c;
  c.min_cluster_size = cfg.get<std::size_t>("cluster", "min_cluster_size", 50);
  c.min_samples = cfg.get<std::size_t>("cluster", "min_samples", sweep::derived_min_samples(c.min_cluster_size));
  c.validate();
  return c;
}

// Comments and their n-gram streams, the reference corpus for comment-topic
// coherence. Posts are appended when coherence.include_posts is set.
inline std::vector<std::vector<std::string>> comment_streams(std::span<const ingest::CleanDoc> docs,
                                                             const represent::VectorizerConfig& v,
                                                             bool include_posts) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : docs)
    if (d.kind == ingest::RecordKind::comment || include_posts) out.push_back(detail::ngram_stream(d.tokens, v));
  return out;
}

// ---------------------------------------------------------------------------

class Pipeline {
 public:
  Pipeline(PipelineConfig config, fs::path out_dir) : cfg_(std::move(config)), out_(std::move(out_dir)) {}

  const fs::path& out_dir() const { return out_; }
  const PipelineConfig& config() const { return cfg_; }

  // Throws StaleInputError naming the first upstream stage whose recorded
  // outputs are missing, modified, or built from an older upstream.
  void check_upstream(Stage s) const {
    const auto manifest = Manifest::load(out_);
    for (Stage d : dependencies(s)) verify(manifest, d);
  }

  // Throws StaleInputError unless the stage's own record and everything
  // upstream of it still match the files on disk.
  void check_current(Stage s) const { verify(Manifest::load(out_), s); }

  void run(Stage s) {
    check_upstream(s);
    spdlog::info("stage {}: running", to_string(s));
    json snapshot;
    try {
      snapshot = execute(s);
    } catch (const StaleInputError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("stage " + to_string(s) + ": " + e.what());
    }
    auto manifest = Manifest::load(out_);
    StageRecord rec;
    for (const auto& f : stage_outputs(s)) {
      const auto p = out_ / f;
      if (!fs::exists(p)) throw Error("stage " + to_string(s) + " did not produce " + f);
      rec.outputs[f] = hex64(file_hash(p));
    }
    for (Stage d : dependencies(s)) rec.inputs[to_string(d)] = manifest.stages.at(to_string(d)).digest();
    rec.config = std::move(snapshot);
    rec.seed = cfg_.seed();
    rec.completed_at = detail::now_utc();
    manifest.stages[to_string(s)] = std::move(rec);
    manifest.save(out_);
    spdlog::info("stage {}: done", to_string(s));
  }

  void run_all() {
    for (Stage s : all_stages()) run(s);
  }

  // Grid search over reducer/clusterer settings, scored by comment-topic
  // coherence. Writes sweep_scores.csv and sweep_best.json.
  sweep::GridSweep run_sweep(const sweep::SweepGrid& grid, std::size_t max_parallel = 1) {
    const auto manifest = Manifest::load(out_);
    verify(manifest, Stage::ingest);
    verify(manifest, Stage::embed);
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    const auto emb = embed::load_embeddings(out_ / "embeddings.emb");
    const auto comments = comments_by_id(docs, emb.ids);
    const auto rc = represent_config(cfg_);
    const auto cc = coherence_config(cfg_);
    const auto streams = comment_streams(docs, rc.vectorizer, cfg_.get<bool>("coherence", "include_posts", false));
    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> tokens;
    std::vector<std::string> texts;
    for (const auto* d : comments) {
      ids.push_back(d->id);
      tokens.push_back(d->tokens);
      texts.push_back(d->text);
    }
    sweep::ClusterEvaluator evaluator = [&](const sweep::GridPoint&, const hdbscan::ClusterAssignment& a) {
      if (a.num_clusters == 0) throw Error("no clusters");
      auto light = rc;
      light.representative_docs = 0;
      const auto reps = represent::represent_topics(ids, tokens, texts, a.labels, light);
      std::vector<std::vector<std::string>> kw;
      for (const auto& r : reps) kw.push_back(r.keywords);
      const auto report = coherence::cv_coherence(kw, streams, cc);
      if (!report.mean) throw Error("no scorable topics");
      return *report.mean;
    };
    auto base = reducer_config(cfg_);
    const auto result = sweep::sweep_grid(emb.values, grid, base, evaluator, {}, max_parallel);
    write_file_atomic(out_ / "sweep_scores.csv", sweep::score_table_csv(result));
    json best = nullptr;
    if (result.best) {
      const auto& s = result.scores[*result.best];
      best = {{"n_neighbors", s.point.n_neighbors}, {"min_dist", s.point.min_dist},
              {"min_cluster_size", s.point.min_cluster_size}, {"min_samples", s.point.min_samples},
              {"coherence", *s.coherence}, {"num_topics", s.num_topics}};
    }
    detail::write_json(out_ / "sweep_best.json", {{"best", best}, {"configurations", result.scores.size()}});
    return result;
  }

 private:
  void verify(const Manifest& m, Stage s) const {
    const auto name = to_string(s);
    const auto hint = " (run `crisis-topics " + name + "` to rebuild it)";
    const auto it = m.stages.find(name);
    if (it == m.stages.end()) throw StaleInputError("stage '" + name + "' has not been run" + hint, name);
    for (const auto& [f, h] : it->second.outputs) {
      const auto p = out_ / f;
      if (!fs::exists(p)) throw StaleInputError("artifact " + f + " of stage '" + name + "' is missing" + hint, name);
      if (hex64(file_hash(p)) != h)
        throw StaleInputError("artifact " + f + " of stage '" + name + "' changed since it was recorded" + hint, name);
    }
    for (Stage d : dependencies(s)) {
      verify(m, d);
      const auto rec = it->second.inputs.find(to_string(d));
      if (rec == it->second.inputs.end() || rec->second != m.stages.at(to_string(d)).digest())
        throw StaleInputError("stage '" + name + "' was built from an older '" + to_string(d) + "'" + hint, name);
    }
  }

  static std::vector<const ingest::CleanDoc*> comments_by_id(const std::vector<ingest::CleanDoc>& docs,
                                                             const std::vector<std::string>& ids) {
    std::map<std::string, const ingest::CleanDoc*> index;
    for (const auto& d : docs) index[d.id] = &d;
    std::vector<const ingest::CleanDoc*> out;
    for (const auto& id : ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw FormatError("embedding row " + id + " has no cleaned document");
      out.push_back(it->second);
    }
    return out;
  }

  json execute(Stage s) {
    fs::create_directories(out_);
    switch (s) {
      case Stage::ingest: return run_ingest();
      case Stage::lda: return run_lda();
      case Stage::embed: return run_embed();
      case Stage::cluster: return run_cluster();
      case Stage::represent: return run_represent();
      case Stage::coherence: return run_coherence();
      case Stage::map: return run_map();
      case Stage::analyze: return run_analyze();
    }
    return {};
  }

  json run_ingest() {
    ingest::LoadOptions opts;
    opts.lenient = cfg_.get<bool>("ingest", "lenient", false);
    const auto window = cfg_.section("ingest").value("window", json());
    if (window.is_array() && window.size() == 2)
      opts.window = std::pair(window[0].get<std::int64_t>(), window[1].get<std::int64_t>());
    const auto corpus_path = cfg_.corpus();
    const auto load = ingest::load_corpus(corpus_path, opts);
    const auto emoji = ingest::EmojiTable::load(cfg_.data_file("ingest", "emoji_table", "emoji.tsv"));
    const auto tok = ingest::TokenizerConfig::with_stopword_file(cfg_.data_file("ingest", "stopwords", "stopwords_en.txt"));
    const auto min_words = cfg_.get<std::size_t>("ingest", "min_words", 10);
    const auto result = ingest::preprocess_corpus(load.records, emoji, tok, min_words);
    write_file_atomic(out_ / "clean.jsonl", ingest::to_jsonl(result.docs));
    write_file_atomic(out_ / "urls.jsonl", detail::to_jsonl(result.all_mentions));
    auto stats = ingest::to_json_value(result.stats);
    stats["skipped_lines"] = load.skipped;
    stats["outside_window"] = load.outside_window;
    detail::write_json(out_ / "ingest_stats.json", stats);
    auto snap = cfg_.section("ingest");
    snap["corpus_hash"] = hex64(file_hash(corpus_path));
    return snap;
  }

  json run_lda() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    std::vector<ingest::CleanDoc> posts;
    for (const auto& d : docs)
      if (d.kind == ingest::RecordKind::post) posts.push_back(d);
    if (posts.empty()) throw ConfigError("no retained posts to model");
    const auto vocab = ingest::build_vocabulary(std::span<const ingest::CleanDoc>(posts),
                                                cfg_.get<std::size_t>("lda", "min_df", 2),
                                                cfg_.get<double>("lda", "max_df_ratio", 1.0));
    const auto encoded = lda::encode_corpus(posts, vocab);
    lda::LdaConfig lc;
    lc.num_topics = cfg_.get<int>("lda", "num_topics", 9);
    lc.alpha = cfg_.get<double>("lda", "alpha", 0.0);
    lc.beta = cfg_.get<double>("lda", "beta", 0.01);
    lc.iterations = cfg_.get<int>("lda", "iterations", 1000);
    lc.burn_in = cfg_.get<int>("lda", "burn_in", 200);
    lc.average_samples = cfg_.get<bool>("lda", "average_samples", false);
    lc.seed = cfg_.seed();
    const auto cc = coherence_config(cfg_);
    std::vector<std::vector<std::string>> streams;
    for (const auto& p : posts) streams.push_back(p.tokens);
    std::string sweep_csv = "num_topics,coherence\n";
    const auto range = cfg_.get<std::vector<int>>("lda", "topic_range", {});
    if (!range.empty()) {
      if (range.size() != 2) throw ConfigError("lda.topic_range must be [k_min, k_max]");
      const auto stats = coherence::WindowStats::build(streams, cc.window_size);
      const auto result = lda::sweep_topic_count(
          encoded.corpus, lc, range[0], range[1],
          [&](const lda::LdaModel& m) {
            std::vector<std::vector<std::string>> words;
            for (std::size_t k = 0; k < m.num_topics(); ++k) words.push_back(lda::top_words(m, static_cast<int>(k), cc.top_n));
            const auto r = coherence::cv_coherence(words, stats, cc);
            if (!r.mean) throw Error("no scorable topics");
            return *r.mean;
          },
          cfg_.get<std::size_t>("lda", "max_parallel", 1));
      for (const auto& s : result.scores)
        sweep_csv += std::to_string(s.num_topics) + "," + (s.score ? format_fixed(*s.score, 6) : "") + "\n";
      lc.num_topics = result.best_k;
    }
    lc.validate();
    const auto model = lda::train_lda(encoded.corpus, lc);
    lda::save_model(model, out_ / "lda_model.bin");
    json topics = json::array();
    for (std::size_t k = 0; k < model.num_topics(); ++k)
      topics.push_back(lda::top_terms(model, static_cast<int>(k), cfg_.get<std::size_t>("lda", "top_terms", 20)));
    detail::write_json(out_ / "lda_topics.json", topics);
    json post_topics = json::object();
    for (std::size_t d = 0; d < model.num_docs(); ++d)
      post_topics[model.doc_ids[d]] = {{"dominant_topic", model.dominant_topic(d)},
                                       {"distribution", model.doc_distribution(d)}};
    for (const auto& id : encoded.dropped) post_topics[id] = {{"dominant_topic", -1}, {"distribution", json::array()}};
    detail::write_json(out_ / "post_topics.json", post_topics);
    write_file_atomic(out_ / "lda_sweep.csv", sweep_csv);
    json snap = lc;
    snap["vocabulary_size"] = vocab.terms().size();
    return snap;
  }

  json run_embed() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    std::vector<ingest::CleanDoc> comments;
    for (const auto& d : docs)
      if (d.kind == ingest::RecordKind::comment) comments.push_back(d);
    const auto provider = cfg_.get<std::string>("embed", "provider", "hashing");
    embed::ProviderConfig pc = embed::ProviderConfig::from_env();
    pc.model = cfg_.get<std::string>("embed", "model", pc.model);
    pc.batch_size = cfg_.get<std::size_t>("embed", "batch_size", pc.batch_size);
    pc.max_concurrency = cfg_.get<std::size_t>("embed", "max_concurrency", pc.max_concurrency);
    pc.max_retries = cfg_.get<int>("embed", "max_retries", pc.max_retries);
    const auto cache = cfg_.get<std::string>("embed", "cache_dir", "");
    if (!cache.empty()) pc.cache_dir = cfg_.resolve(cache);
    embed::BatchTransport transport;
    if (provider == "hashing") {
      const auto dims = cfg_.get<std::size_t>("embed", "dims", 256);
      pc.model = "hashing-" + std::to_string(dims);
      transport = embed::hashing_transport(dims);
    } else if (provider == "http") {
      transport = embed::http_transport(pc);
    } else {
      throw ConfigError("embed.provider must be 'hashing' or 'http'");
    }
    auto m = embed::fetch_embeddings(std::span<const ingest::CleanDoc>(comments), pc, transport);
    embed::write_embeddings(out_ / "embeddings.emb", m);
    auto snap = cfg_.section("embed");
    snap["model"] = pc.model;
    return snap;
  }

  json run_cluster() {
    const auto emb = embed::load_embeddings(out_ / "embeddings.emb");
    const auto rcfg = reducer_config(cfg_);
    const auto ccfg = clusterer_config(cfg_);
    const auto red = reduce::reduce(emb.values, rcfg);
    const auto a = hdbscan::cluster(red.embedding, ccfg);
    json j{{"doc_ids", emb.ids},
           {"labels", a.labels},
           {"num_clusters", a.num_clusters},
           {"cluster_sizes", a.cluster_sizes},
           {"stabilities", a.stabilities},
           {"noise_fraction", a.noise_fraction()},
           {"reducer", {{"a", red.curve.a}, {"b", red.curve.b}, {"epochs", red.epochs}, {"degenerate", red.degenerate}}}};
    detail::write_json(out_ / "clusters.json", j);
    detail::write_json(out_ / "condensed_tree.json", hdbscan::condensed_tree_json(a));
    return {{"n_neighbors", rcfg.n_neighbors}, {"min_dist", rcfg.min_dist},           {"n_components", rcfg.n_components},
            {"epochs", red.epochs},            {"min_cluster_size", ccfg.min_cluster_size}, {"min_samples", ccfg.min_samples}};
  }

  json run_represent() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    const auto clusters = read_clusters(out_);
    const auto comments = comments_by_id(docs, clusters.doc_ids);
    const auto rc = represent_config(cfg_);
    std::vector<std::vector<std::string>> tokens;
    std::vector<std::string> texts;
    for (const auto* d : comments) {
      tokens.push_back(d->tokens);
      texts.push_back(d->text);
    }
    represent::LabelerConfig lab;
    represent::ChatTransport chat;
    if (cfg_.get<bool>("represent", "llm", false)) {
      lab = represent::LabelerConfig::from_env();
      lab.prompt_template = read_file(cfg_.data_file("represent", "prompt_template", "prompt_template.txt"));
      if (lab.enabled) chat = represent::http_chat_transport(lab);
    }
    std::vector<represent::TopicRepresentation> reps;
    if (std::any_of(clusters.labels.begin(), clusters.labels.end(), [](int l) { return l >= 0; }))
      reps = represent::represent_topics(clusters.doc_ids, tokens, texts, clusters.labels, rc, lab, chat);
    else
      spdlog::warn("represent: every comment is noise; no topics to describe");
    detail::write_json(out_ / "topics.json", reps);
    auto snap = cfg_.section("represent");
    snap["llm_enabled"] = lab.enabled;
    return snap;
  }

  json run_coherence() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    const auto reps = read_topics(out_);
    const auto rc = represent_config(cfg_);
    const auto cc = coherence_config(cfg_);
    const bool include_posts = cfg_.get<bool>("coherence", "include_posts", false);
    json out = json::object();
    {
      std::vector<std::vector<std::string>> kw;
      for (const auto& r : reps) kw.push_back(r.keywords);
      const auto streams = comment_streams(docs, rc.vectorizer, include_posts);
      auto report = streams.empty() || kw.empty() ? coherence::CoherenceReport{}
                                                  : coherence::cv_coherence(kw, streams, cc);
      for (std::size_t i = 0; i < report.per_topic.size(); ++i) report.per_topic[i].topic_id = reps[i].topic_id;
      out["comments"] = coherence::to_json_value(report);
    }
    {
      std::vector<std::vector<std::string>> words;
      for (const auto& t : detail::read_json(out_ / "lda_topics.json")) {
        std::vector<std::string> w;
        for (const auto& term : t.at("terms")) w.push_back(term.at("term").get<std::string>());
        words.push_back(std::move(w));
      }
      std::vector<std::vector<std::string>> streams;
      for (const auto& d : docs)
        if (d.kind == ingest::RecordKind::post) streams.push_back(d.tokens);
      const auto report = streams.empty() || words.empty() ? coherence::CoherenceReport{}
                                                           : coherence::cv_coherence(words, streams, cc);
      out["posts"] = coherence::to_json_value(report);
    }
    detail::write_json(out_ / "coherence.json", out);
    auto snap = cfg_.section("coherence");
    snap["window_size"] = cc.window_size;
    snap["top_n"] = cc.top_n;
    return snap;
  }

  json run_map() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    std::map<std::string, const ingest::CleanDoc*> by_id;
    for (const auto& d : docs) by_id[d.id] = &d;
    const auto sch = schema::load_schema(cfg_.data_file("map", "schema", "schema.json"));
    const auto rules = schema::load_rules(cfg_.data_file("map", "rules", "rules.json"), sch);
    const auto lex = schema::Lexicons::load(cfg_.data_file("map", "grief_lexicon", "lexicons/grief.txt"),
                                            cfg_.data_file("map", "mental_health_lexicon", "lexicons/mental_health.txt"));
    const auto overrides_path = comment_overrides_path();
    const auto overrides = schema::load_overrides(overrides_path, sch);
    const auto post_overrides_file = cfg_.get<std::string>("map", "post_overrides", "");
    const auto post_overrides =
        post_overrides_file.empty() ? schema::Overrides{} : schema::load_overrides(cfg_.resolve(post_overrides_file), sch);

    // Comment topics.
    const auto reps = read_topics(out_);
    std::vector<schema::TopicLabelSet> comment_auto;
    for (const auto& r : reps) {
      std::vector<std::string> texts;
      for (const auto& id : r.representative_doc_ids)
        if (const auto it = by_id.find(id); it != by_id.end()) texts.push_back(it->second->text);
      comment_auto.push_back(schema::label_topic(r.topic_id, r.keywords, r.label, texts, rules, sch, lex));
    }
    const auto comment_final = schema::apply_review(comment_auto, overrides);

    // Post topics: top LDA words plus the posts that lean on the topic most.
    const auto lda_topics = detail::read_json(out_ / "lda_topics.json");
    const auto post_topics = detail::read_json(out_ / "post_topics.json");
    const auto top_n = cfg_.get<std::size_t>("map", "post_keywords", 10);
    std::vector<schema::TopicLabelSet> post_auto;
    for (const auto& t : lda_topics) {
      const int k = t.at("topic_id").get<int>();
      std::vector<std::string> kw;
      for (const auto& term : t.at("terms")) {
        if (kw.size() >= top_n) break;
        kw.push_back(term.at("term").get<std::string>());
      }
      std::vector<std::pair<double, std::string>> lean;
      for (const auto& [id, v] : post_topics.items()) {
        const auto& dist = v.at("distribution");
        if (static_cast<std::size_t>(k) < dist.size()) lean.emplace_back(-dist[static_cast<std::size_t>(k)].get<double>(), id);
      }
      std::sort(lean.begin(), lean.end());
      std::vector<std::string> texts;
      for (std::size_t i = 0; i < std::min<std::size_t>(3, lean.size()); ++i)
        if (const auto it = by_id.find(lean[i].second); it != by_id.end()) texts.push_back(it->second->text);
      post_auto.push_back(schema::label_topic(k, kw, "", texts, rules, sch, lex));
    }
    const auto post_final = schema::apply_review(post_auto, post_overrides);

    // Instances.
    const auto clusters = read_clusters(out_);
    std::map<std::string, int> cluster_of;
    for (std::size_t i = 0; i < clusters.doc_ids.size(); ++i) cluster_of[clusters.doc_ids[i]] = clusters.labels[i];
    std::vector<schema::InstanceRef> refs;
    for (const auto& d : docs) {
      schema::InstanceRef r{d.id, d.kind, -1, d.link_id};
      if (d.kind == ingest::RecordKind::post) {
        if (post_topics.contains(d.id)) r.topic_id = post_topics[d.id].at("dominant_topic").get<int>();
      } else if (const auto it = cluster_of.find(d.id); it != cluster_of.end()) {
        r.topic_id = it->second;
      }
      refs.push_back(std::move(r));
    }
    std::map<int, schema::TopicLabelSet> post_map, comment_map;
    for (const auto& t : post_final) post_map[t.topic_id] = t;
    for (const auto& t : comment_final) comment_map[t.topic_id] = t;
    const auto prop = schema::propagate_labels(refs, post_map, comment_map);

    detail::write_json(out_ / "topic_labels.json", {{"comments", schema::review_json(comment_auto, comment_final)},
                                                    {"posts", schema::review_json(post_auto, post_final)}});
    write_file_atomic(out_ / "instance_labels.jsonl", detail::to_jsonl(prop.labels));
    std::size_t needs_review = 0;
    for (const auto& t : comment_final) needs_review += t.needs_review;
    for (const auto& t : post_final) needs_review += t.needs_review;
    detail::write_json(out_ / "map_stats.json", {{"instances", prop.labels.size()},
                                                 {"inherited", prop.inherited},
                                                 {"unresolved_parents", prop.unresolved_parents},
                                                 {"topics_needing_review", needs_review},
                                                 {"comment_overrides", overrides.size()},
                                                 {"post_overrides", post_overrides.size()}});
    auto snap = cfg_.section("map");
    snap["overrides_hash"] = fs::exists(overrides_path) ? hex64(file_hash(overrides_path)) : "";
    return snap;
  }

  json run_analyze() {
    const auto docs = ingest::read_clean_jsonl(out_ / "clean.jsonl");
    std::map<std::string, const ingest::CleanDoc*> by_id;
    for (const auto& d : docs) by_id[d.id] = &d;
    const auto labels = detail::read_jsonl<schema::InstanceLabels>(out_ / "instance_labels.jsonl");
    const auto mentions = detail::read_jsonl<ingest::UrlMention>(out_ / "urls.jsonl");
    std::vector<analytics::LabeledInstance> xs;
    for (const auto& l : labels) {
      const auto it = by_id.find(l.instance_id);
      if (it == by_id.end()) throw FormatError("label for unknown instance " + l.instance_id);
      xs.push_back({l.instance_id, it->second->created_utc, it->second->subreddit, it->second->tokens, l.sa, l.cn,
                    l.grief, l.mental_health});
    }
    analytics::AnalyticsConfig ac;
    ac.time_zone = cfg_.time_zone_override.value_or(cfg_.get<std::string>("analyze", "time_zone", ac.time_zone));
    const auto denom = cfg_.get<std::string>("analyze", "denominator", "cn_labeled");
    if (denom == "all")
      ac.denominator = analytics::Denominator::all;
    else if (denom != "cn_labeled")
      throw ConfigError("analyze.denominator must be 'cn_labeled' or 'all'");
    const auto segs = cfg_.section("analyze").value("segments", json());
    if (segs.is_array()) {
      ac.segments.segments.clear();
      for (const auto& s : segs)
        ac.segments.segments.push_back({s.at("name").get<std::string>(), s.at("start_minute").get<int>()});
    }
    const auto sch = schema::load_schema(cfg_.data_file("map", "schema", "schema.json"));
    const auto fires = analytics::FireMap::load(cfg_.data_file("analyze", "fire_map", "fire_map.json"));
    const auto health = read_word_list(cfg_.data_file("analyze", "health_domains", "health_domains.txt"));
    const auto report = analytics::analyze(xs, mentions, sch, fires, health, ac);
    analytics::emit_report(report, out_ / "analytics");
    auto snap = cfg_.section("analyze");
    snap["time_zone"] = ac.time_zone;
    return snap;
  }

  fs::path comment_overrides_path() const {
    const auto p = cfg_.get<std::string>("map", "overrides", "");
    return p.empty() ? out_ / "overrides.json" : cfg_.resolve(p);
  }

  PipelineConfig cfg_;
  fs::path out_;
};

inline sweep::SweepGrid load_grid(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (j.value("standard", false)) return sweep::SweepGrid::standard();
  try {
    sweep::SweepGrid g;
    g.n_neighbors = j.at("n_neighbors").get<std::vector<std::size_t>>();
    g.min_dist = j.at("min_dist").get<std::vector<double>>();
    g.min_cluster_size = j.at("min_cluster_size").get<std::vector<std::size_t>>();
    if (g.size() == 0) throw ConfigError("sweep grid is empty");
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace crisis::pipeline
