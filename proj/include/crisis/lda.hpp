#pragma once

// Collapsed Gibbs sampling LDA with fold-in inference, a topic-count sweep
// and a binary archive format.

#include "crisis/common.hpp"
#include "crisis/ingest.hpp"

#include <json.hpp>

#include <future>
#include <map>
#include <numeric>
#include <optional>

namespace crisis::lda {

using nlohmann::json;

struct LdaConfig {
  int num_topics = 9;
  double alpha = 0.0;  // <= 0 selects 50 / num_topics
  double beta = 0.01;
  int iterations = 1000;
  int burn_in = 200;
  std::uint64_t seed = 42;
  bool average_samples = false;

  double effective_alpha() const { return alpha > 0.0 ? alpha : 50.0 / num_topics; }

  void validate() const {
    if (num_topics < 1) throw ConfigError("num_topics must be >= 1");
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    if (burn_in < 0) throw ConfigError("burn_in must be >= 0");
    if (iterations <= burn_in) throw ConfigError("iterations must exceed burn_in");
  }
};

inline void to_json(json& j, const LdaConfig& c) {
  j = json{{"num_topics", c.num_topics}, {"alpha", c.effective_alpha()}, {"beta", c.beta},
           {"iterations", c.iterations}, {"burn_in", c.burn_in},        {"seed", c.seed},
           {"average_samples", c.average_samples}};
}
inline void from_json(const json& j, LdaConfig& c) {
  c.num_topics = j.at("num_topics").get<int>();
  c.alpha = j.value("alpha", 0.0);
  c.beta = j.value("beta", 0.01);
  c.iterations = j.value("iterations", 1000);
  c.burn_in = j.value("burn_in", 200);
  c.seed = j.value("seed", std::uint64_t{42});
  c.average_samples = j.value("average_samples", false);
}

// Bag-of-words corpus: each document is a sequence of vocabulary indices.
struct BowCorpus {
  std::vector<std::string> doc_ids;
  std::vector<std::vector<int>> docs;
  std::vector<std::string> terms;

  std::size_t size() const { return docs.size(); }
  std::size_t vocab_size() const { return terms.size(); }
  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& d : docs) n += d.size();
    return n;
  }
};

// Encodes cleaned documents; documents with no in-vocabulary token are left
// out and reported in `dropped`.
struct EncodedCorpus {
  BowCorpus corpus;
  std::vector<std::string> dropped;
};

inline EncodedCorpus encode_corpus(std::span<const ingest::CleanDoc> docs, const ingest::Vocabulary& vocab) {
  EncodedCorpus out;
  out.corpus.terms = vocab.terms();
  for (const auto& d : docs) {
    auto ids = vocab.encode(d.tokens);
    if (ids.empty()) {
      out.dropped.push_back(d.id);
      continue;
    }
    out.corpus.doc_ids.push_back(d.id);
    out.corpus.docs.push_back(std::move(ids));
  }
  return out;
}

struct LdaModel {
  LdaConfig config;
  std::vector<std::string> terms;
  std::vector<std::string> doc_ids;
  DenseMatrix<std::int32_t> topic_word;  // K x V
  DenseMatrix<std::int32_t> doc_topic;   // D x K
  std::vector<std::int32_t> topic_totals;
  std::vector<std::vector<int>> assignments;  // empty after reload
  // Post-burn-in averages, present only with config.average_samples.
  std::optional<DenseMatrix<double>> topic_word_avg;
  std::optional<DenseMatrix<double>> doc_topic_avg;

  std::size_t num_topics() const { return topic_totals.size(); }
  std::size_t vocab_size() const { return terms.size(); }
  std::size_t num_docs() const { return doc_ids.size(); }

  double word_probability(std::size_t k, std::size_t w) const {
    if (topic_word_avg) return (*topic_word_avg)(k, w);
    const double beta = config.beta;
    return (topic_word(k, w) + beta) / (topic_totals[k] + vocab_size() * beta);
  }

  std::vector<double> doc_distribution(std::size_t d) const {
    const std::size_t K = num_topics();
    std::vector<double> theta(K);
    if (doc_topic_avg) {
      for (std::size_t k = 0; k < K; ++k) theta[k] = (*doc_topic_avg)(d, k);
      return theta;
    }
    const double alpha = config.effective_alpha();
    double n = 0;
    for (std::size_t k = 0; k < K; ++k) n += doc_topic(d, k);
    for (std::size_t k = 0; k < K; ++k) theta[k] = (doc_topic(d, k) + alpha) / (n + K * alpha);
    return theta;
  }

  // Argmax of the document's topic counts; ties go to the smaller topic id.
  int dominant_topic(std::size_t d) const {
    const auto theta = doc_distribution(d);
    return static_cast<int>(std::max_element(theta.begin(), theta.end()) - theta.begin());
  }
};

// Called after each sweep with the 1-based sweep number.
using SweepObserver = std::function<void(int, const LdaModel&)>;

namespace detail {

inline int sample_index(std::span<const double> weights, double total, Rng& rng) {
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size() - 1);
}

inline std::vector<std::size_t> canonical_order(const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  return order;
}

constexpr std::uint64_t kInitSweep = 0;

}  // namespace detail

// Documents are visited in id order and every document draws from its own
// stream keyed by (seed, id, sweep), so the result does not depend on the
// order in which documents are supplied.
inline LdaModel train_lda(const BowCorpus& corpus, const LdaConfig& config, const SweepObserver& observer = {}) {
  config.validate();
  if (corpus.docs.empty()) throw ConfigError("LDA corpus is empty");
  if (corpus.doc_ids.size() != corpus.docs.size()) throw ConfigError("doc_ids and docs differ in length");
  const std::size_t K = static_cast<std::size_t>(config.num_topics);
  const std::size_t V = corpus.vocab_size();
  const std::size_t D = corpus.size();
  for (std::size_t d = 0; d < D; ++d) {
    if (corpus.docs[d].empty()) throw ConfigError("document " + corpus.doc_ids[d] + " is empty");
    for (int w : corpus.docs[d])
      if (w < 0 || static_cast<std::size_t>(w) >= V) throw ConfigError("token id out of range in " + corpus.doc_ids[d]);
  }
  if (K > corpus.total_tokens())
    spdlog::warn("num_topics {} exceeds total tokens {}", K, corpus.total_tokens());

  LdaModel m;
  m.config = config;
  m.terms = corpus.terms;
  m.doc_ids = corpus.doc_ids;
  m.topic_word = DenseMatrix<std::int32_t>(K, V);
  m.doc_topic = DenseMatrix<std::int32_t>(D, K);
  m.topic_totals.assign(K, 0);
  m.assignments.resize(D);

  const auto order = detail::canonical_order(corpus.doc_ids);
  std::vector<std::uint64_t> doc_keys(D);
  for (std::size_t d = 0; d < D; ++d) doc_keys[d] = xxhash64(corpus.doc_ids[d]);

  for (std::size_t d : order) {
    auto rng = make_stream(config.seed, doc_keys[d], detail::kInitSweep);
    auto& z = m.assignments[d];
    z.resize(corpus.docs[d].size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const int k = static_cast<int>(uniform_index(rng, K));
      z[i] = k;
      ++m.topic_word(k, corpus.docs[d][i]);
      ++m.doc_topic(d, k);
      ++m.topic_totals[k];
    }
  }

  const double alpha = config.effective_alpha();
  const double beta = config.beta;
  const double vbeta = V * beta;
  std::vector<double> weights(K);
  DenseMatrix<double> tw_sum, dt_sum;
  std::size_t samples = 0;
  if (config.average_samples) {
    tw_sum = DenseMatrix<double>(K, V);
    dt_sum = DenseMatrix<double>(D, K);
  }

  for (int sweep = 1; sweep <= config.iterations; ++sweep) {
    for (std::size_t d : order) {
      auto rng = make_stream(config.seed, doc_keys[d], static_cast<std::uint64_t>(sweep));
      const auto& words = corpus.docs[d];
      auto& z = m.assignments[d];
      for (std::size_t i = 0; i < words.size(); ++i) {
        const int w = words[i];
        int k = z[i];
        --m.topic_word(k, w);
        --m.doc_topic(d, k);
        --m.topic_totals[k];
        double total = 0.0;
        for (std::size_t t = 0; t < K; ++t) {
          weights[t] = (m.doc_topic(d, t) + alpha) * (m.topic_word(t, w) + beta) / (m.topic_totals[t] + vbeta);
          total += weights[t];
        }
        k = detail::sample_index(weights, total, rng);
        z[i] = k;
        ++m.topic_word(k, w);
        ++m.doc_topic(d, k);
        ++m.topic_totals[k];
      }
    }
    if (config.average_samples && sweep > config.burn_in) {
      ++samples;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t w = 0; w < V; ++w) tw_sum(k, w) += (m.topic_word(k, w) + beta) / (m.topic_totals[k] + vbeta);
      for (std::size_t d = 0; d < D; ++d) {
        const double n = static_cast<double>(corpus.docs[d].size());
        for (std::size_t k = 0; k < K; ++k) dt_sum(d, k) += (m.doc_topic(d, k) + alpha) / (n + K * alpha);
      }
    }
    if (observer) observer(sweep, m);
  }

  if (config.average_samples && samples > 0) {
    for (auto& v : tw_sum.data()) v /= static_cast<double>(samples);
    for (auto& v : dt_sum.data()) v /= static_cast<double>(samples);
    m.topic_word_avg = std::move(tw_sum);
    m.doc_topic_avg = std::move(dt_sum);
  }
  return m;
}

struct InferenceResult {
  std::vector<double> distribution;
  bool all_out_of_vocabulary = false;
};

// Fold-in Gibbs sampling against frozen topic-word counts. Unknown term ids
// are ignored; a document with no known terms gets the uniform distribution.
inline InferenceResult infer_doc_topics(const LdaModel& model, std::span<const int> doc, int iterations = 100,
                                        std::uint64_t seed = 0) {
  const std::size_t K = model.num_topics();
  const std::size_t V = model.vocab_size();
  std::vector<int> words;
  for (int w : doc)
    if (w >= 0 && static_cast<std::size_t>(w) < V) words.push_back(w);
  InferenceResult out;
  if (words.empty()) {
    spdlog::warn("document has no in-vocabulary terms; returning uniform topic distribution");
    out.distribution.assign(K, 1.0 / K);
    out.all_out_of_vocabulary = true;
    return out;
  }
  std::uint64_t doc_key = 0;
  for (int w : words) doc_key = splitmix64(doc_key ^ static_cast<std::uint64_t>(w));

  const double alpha = model.config.effective_alpha();
  std::vector<double> phi_col(K * words.size());
  for (std::size_t i = 0; i < words.size(); ++i)
    for (std::size_t k = 0; k < K; ++k) phi_col[i * K + k] = model.word_probability(k, words[i]);

  std::vector<int> z(words.size());
  std::vector<int> counts(K, 0);
  auto init = make_stream(seed, doc_key, detail::kInitSweep);
  for (auto& k : z) {
    k = static_cast<int>(uniform_index(init, K));
    ++counts[k];
  }
  std::vector<double> weights(K), acc(K, 0.0);
  const int burn = iterations / 2;
  int kept = 0;
  for (int sweep = 1; sweep <= iterations; ++sweep) {
    auto rng = make_stream(seed, doc_key, static_cast<std::uint64_t>(sweep));
    for (std::size_t i = 0; i < words.size(); ++i) {
      --counts[z[i]];
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        weights[k] = (counts[k] + alpha) * phi_col[i * K + k];
        total += weights[k];
      }
      z[i] = detail::sample_index(weights, total, rng);
      ++counts[z[i]];
    }
    if (sweep > burn) {
      ++kept;
      for (std::size_t k = 0; k < K; ++k) acc[k] += counts[k] + alpha;
    }
  }
  if (kept == 0)
    for (std::size_t k = 0; k < K; ++k) acc[k] = counts[k] + alpha;
  const double sum = std::accumulate(acc.begin(), acc.end(), 0.0);
  out.distribution.resize(K);
  for (std::size_t k = 0; k < K; ++k) out.distribution[k] = acc[k] / sum;
  return out;
}

struct TopicTermList {
  int topic_id = 0;
  std::vector<std::pair<std::string, double>> terms;
};

inline void to_json(json& j, const TopicTermList& t) {
  json terms = json::array();
  for (const auto& [term, p] : t.terms) terms.push_back({{"term", term}, {"probability", p}});
  j = json{{"topic_id", t.topic_id}, {"terms", terms}};
}

// Highest-probability terms of a topic; equal probabilities order by term.
inline TopicTermList top_terms(const LdaModel& model, int topic, std::size_t n) {
  if (topic < 0 || static_cast<std::size_t>(topic) >= model.num_topics())
    throw ConfigError("topic " + std::to_string(topic) + " out of range");
  const std::size_t V = model.vocab_size();
  std::vector<std::pair<double, std::size_t>> scored(V);
  for (std::size_t w = 0; w < V; ++w) scored[w] = {model.word_probability(topic, w), w};
  n = std::min(n, V);
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [&](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return model.terms[a.second] < model.terms[b.second];
                    });
  TopicTermList out{topic, {}};
  for (std::size_t i = 0; i < n; ++i) out.terms.emplace_back(model.terms[scored[i].second], scored[i].first);
  return out;
}

inline std::vector<std::string> top_words(const LdaModel& model, int topic, std::size_t n) {
  std::vector<std::string> out;
  for (auto& [t, p] : top_terms(model, topic, n).terms) out.push_back(t);
  return out;
}

// Per-token perplexity of a corpus under the model's current estimates.
// Documents are matched to the model by position.
inline double perplexity(const LdaModel& model, const BowCorpus& corpus) {
  const std::size_t K = model.num_topics();
  double log_lik = 0.0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto theta = model.doc_distribution(d);
    for (int w : corpus.docs[d]) {
      double p = 0.0;
      for (std::size_t k = 0; k < K; ++k) p += theta[k] * model.word_probability(k, w);
      log_lik += std::log(p);
      ++n;
    }
  }
  return std::exp(-log_lik / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Topic-count sweep

struct TopicCountScore {
  int num_topics = 0;
  std::optional<double> score;
  std::string error;
};

struct TopicCountSweep {
  int best_k = 0;
  double best_score = 0.0;
  std::vector<TopicCountScore> scores;
};

using ModelEvaluator = std::function<double(const LdaModel&)>;

// Trains one chain per K (concurrently when max_parallel > 1). When the base
// config leaves alpha unset each chain uses 50 / K.
inline TopicCountSweep sweep_topic_count(const BowCorpus& corpus, const LdaConfig& base, int k_min, int k_max,
                                         const ModelEvaluator& evaluator, std::size_t max_parallel = 1) {
  if (k_min < 1 || k_min > k_max) throw ConfigError("invalid topic-count range");
  const std::size_t n = static_cast<std::size_t>(k_max - k_min + 1);
  std::vector<TopicCountScore> scores(n);
  auto run = [&](std::size_t i) {
    auto cfg = base;
    cfg.num_topics = k_min + static_cast<int>(i);
    scores[i].num_topics = cfg.num_topics;
    try {
      const auto model = train_lda(corpus, cfg);
      const double s = evaluator(model);
      if (!std::isfinite(s)) throw Error("non-finite score");
      scores[i].score = s;
    } catch (const std::exception& e) {
      scores[i].error = e.what();
      spdlog::warn("topic-count sweep: K={} failed: {}", cfg.num_topics, e.what());
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, max_parallel);
  for (std::size_t start = 0; start < n; start += workers) {
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < std::min(n, start + workers); ++i)
      batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run, i));
    for (auto& f : batch) f.get();
  }
  TopicCountSweep out;
  out.scores = std::move(scores);
  bool found = false;
  for (const auto& s : out.scores) {
    if (!s.score) continue;
    if (!found || *s.score > out.best_score) {
      out.best_k = s.num_topics;
      out.best_score = *s.score;
      found = true;
    }
  }
  if (!found) throw Error("every topic count in the sweep failed");
  return out;
}

// ---------------------------------------------------------------------------
// Archive: "LDA1", u32 manifest length, JSON manifest, then topic_word (KxV),
// doc_topic (DxK) and topic_totals (K) as little-endian int32, followed by the
// averaged estimates as little-endian float64 when present.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_i32s(std::string& out, std::span<const std::int32_t> vs) {
  for (auto v : vs) put_u32(out, static_cast<std::uint32_t>(v));
}
inline void put_f64s(std::string& out, std::span<const double> vs) {
  for (double v : vs) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > data_.size())
      throw FormatError(std::string("LDA archive truncated in ") + what + ": expected " + std::to_string(n) +
                        " bytes, found " + std::to_string(data_.size() - pos_));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto v = crisis::detail::read_le32(reinterpret_cast<const unsigned char*>(data_.data() + pos_));
    pos_ += 4;
    return v;
  }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::int32_t> i32s(std::size_t n, const char* what) {
    need(n * 4, what);
    std::vector<std::int32_t> v(n);
    for (auto& x : v) x = static_cast<std::int32_t>(u32(what));
    return v;
  }
  std::vector<double> f64s(std::size_t n, const char* what) {
    need(n * 8, what);
    std::vector<double> v(n);
    for (auto& x : v) {
      const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
      x = std::bit_cast<double>(crisis::detail::read_le64(p));
      pos_ += 8;
    }
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint64_t terms_hash(const std::vector<std::string>& terms) {
  std::string joined;
  for (const auto& t : terms) {
    joined += t;
    joined += '\n';
  }
  return xxhash64(joined);
}

}  // namespace detail

inline std::string serialize_model(const LdaModel& m) {
  const bool averaged = m.topic_word_avg.has_value();
  json manifest{{"format", "LDA1"},
                {"config", m.config},
                {"num_topics", m.num_topics()},
                {"vocab_size", m.vocab_size()},
                {"num_docs", m.num_docs()},
                {"vocabulary", m.terms},
                {"vocabulary_hash", hex64(detail::terms_hash(m.terms))},
                {"doc_ids", m.doc_ids},
                {"averaged", averaged}};
  const std::string text = manifest.dump();
  std::string out = "LDA1";
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_i32s(out, m.topic_word.data());
  detail::put_i32s(out, m.doc_topic.data());
  detail::put_i32s(out, m.topic_totals);
  if (averaged) {
    detail::put_f64s(out, m.topic_word_avg->data());
    detail::put_f64s(out, m.doc_topic_avg->data());
  }
  return out;
}

inline LdaModel deserialize_model(std::string_view data) {
  detail::ByteReader in(data);
  if (in.bytes(4, "magic") != "LDA1") throw FormatError("not an LDA archive");
  const auto len = in.u32("manifest length");
  json manifest;
  try {
    manifest = json::parse(in.bytes(len, "manifest"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("LDA manifest: ") + e.what());
  }
  LdaModel m;
  const auto K = manifest.at("num_topics").get<std::size_t>();
  const auto V = manifest.at("vocab_size").get<std::size_t>();
  const auto D = manifest.at("num_docs").get<std::size_t>();
  m.config = manifest.at("config").get<LdaConfig>();
  m.terms = manifest.at("vocabulary").get<std::vector<std::string>>();
  m.doc_ids = manifest.at("doc_ids").get<std::vector<std::string>>();
  if (m.terms.size() != V || m.doc_ids.size() != D || static_cast<std::size_t>(m.config.num_topics) != K)
    throw FormatError("LDA manifest dimensions disagree");
  if (hex64(detail::terms_hash(m.terms)) != manifest.at("vocabulary_hash").get<std::string>())
    throw FormatError("LDA vocabulary hash mismatch");
  m.topic_word = DenseMatrix<std::int32_t>(K, V, in.i32s(K * V, "topic_word"));
  m.doc_topic = DenseMatrix<std::int32_t>(D, K, in.i32s(D * K, "doc_topic"));
  m.topic_totals = in.i32s(K, "topic_totals");
  if (manifest.value("averaged", false)) {
    m.topic_word_avg = DenseMatrix<double>(K, V, in.f64s(K * V, "topic_word_avg"));
    m.doc_topic_avg = DenseMatrix<double>(D, K, in.f64s(D * K, "doc_topic_avg"));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after LDA archive");
  return m;
}

inline void save_model(const LdaModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(m));
}
inline LdaModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

// Count invariants; returns an empty string when they all hold.
inline std::string check_count_invariants(const LdaModel& m, const BowCorpus& corpus) {
  const std::size_t K = m.num_topics(), V = m.vocab_size();
  std::int64_t grand = 0;
  for (std::size_t d = 0; d < m.num_docs(); ++d) {
    std::int64_t s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (m.doc_topic(d, k) < 0) return "negative doc_topic count";
      s += m.doc_topic(d, k);
    }
    if (s != static_cast<std::int64_t>(corpus.docs[d].size())) return "doc " + m.doc_ids[d] + " count mismatch";
  }
  for (std::size_t k = 0; k < K; ++k) {
    std::int64_t s = 0;
    for (std::size_t w = 0; w < V; ++w) s += m.topic_word(k, w);
    if (s != m.topic_totals[k]) return "topic " + std::to_string(k) + " total mismatch";
    grand += m.topic_totals[k];
  }
  if (grand != static_cast<std::int64_t>(corpus.total_tokens())) return "corpus total mismatch";
  return {};
}

}  // namespace crisis::lda
