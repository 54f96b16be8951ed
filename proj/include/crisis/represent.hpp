#pragma once

// Topic representations for clustered documents: class-based TF-IDF over
// n-grams, MMR keyword diversification, representative documents, and
// LLM-generated labels with a deterministic fallback.

#include "crisis/common.hpp"

#include <httplib.h>
#undef _res  // resolv.h macro collides with Eigen parameter names
#include <json.hpp>

#include <future>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>

namespace crisis::represent {

using nlohmann::json;

struct VectorizerConfig {
  std::size_t ngram_min = 1;
  std::size_t ngram_max = 2;
  std::size_t min_df = 2;  // documents, not classes

  void validate() const {
    if (ngram_min < 1 || ngram_max < ngram_min) throw ConfigError("invalid ngram range");
    if (min_df < 1) throw ConfigError("min_df must be >= 1");
  }
};

// All n-grams of a token sequence, grouped by order (all unigrams, then all
// bigrams, ...). N-gram tokens are joined with a single space.
inline std::vector<std::string> ngrams(std::span<const std::string> tokens, std::size_t lo = 1, std::size_t hi = 2) {
  std::vector<std::string> out;
  for (std::size_t n = lo; n <= hi; ++n) {
    if (tokens.size() < n) break;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (std::size_t k = 1; k < n; ++k) g += " " + tokens[i + k];
      out.push_back(std::move(g));
    }
  }
  return out;
}

struct CTfIdfModel {
  std::vector<int> class_ids;  // ascending, noise excluded
  std::vector<std::string> terms;
  std::unordered_map<std::string, std::size_t> term_index;
  DenseMatrix<double> weights;  // classes x terms
  std::vector<double> class_totals;
  std::vector<double> term_frequency;  // f_t, summed over classes
  double average_class_size = 0.0;     // A

  std::optional<std::size_t> class_row(int class_id) const {
    auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id) return std::nullopt;
    return static_cast<std::size_t>(it - class_ids.begin());
  }
  double weight(int class_id, std::string_view term) const {
    const auto r = class_row(class_id);
    const auto it = term_index.find(std::string(term));
    if (!r || it == term_index.end()) return 0.0;
    return weights(*r, it->second);
  }
};

// W[c, t] = tf(t, c) * ln(1 + A / f_t) where A is the mean per-class term
// count. Documents labelled -1 are ignored.
inline CTfIdfModel ctfidf(std::span<const std::vector<std::string>> doc_tokens, std::span<const int> labels,
                          const VectorizerConfig& config = {}) {
  config.validate();
  if (doc_tokens.size() != labels.size()) throw ConfigError("documents and labels differ in length");
  CTfIdfModel m;
  std::map<std::string, std::size_t> df;
  std::vector<std::vector<std::string>> grams(doc_tokens.size());
  std::set<int> classes;
  for (std::size_t d = 0; d < doc_tokens.size(); ++d) {
    if (labels[d] < 0) continue;
    classes.insert(labels[d]);
    grams[d] = ngrams(doc_tokens[d], config.ngram_min, config.ngram_max);
    std::set<std::string> uniq(grams[d].begin(), grams[d].end());
    for (const auto& g : uniq) ++df[g];
  }
  if (classes.empty()) throw ConfigError("no classes: every document is noise");
  for (const auto& [g, n] : df)
    if (n >= config.min_df) {
      m.term_index.emplace(g, m.terms.size());
      m.terms.push_back(g);
    }
  if (m.terms.empty()) throw ConfigError("no terms survive min_df");
  m.class_ids.assign(classes.begin(), classes.end());
  const std::size_t C = m.class_ids.size(), T = m.terms.size();
  DenseMatrix<double> tf(C, T);
  for (std::size_t d = 0; d < doc_tokens.size(); ++d) {
    if (labels[d] < 0) continue;
    const auto r = *m.class_row(labels[d]);
    for (const auto& g : grams[d]) {
      auto it = m.term_index.find(g);
      if (it != m.term_index.end()) tf(r, it->second) += 1.0;
    }
  }
  m.class_totals.assign(C, 0.0);
  m.term_frequency.assign(T, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      m.class_totals[c] += tf(c, t);
      m.term_frequency[t] += tf(c, t);
    }
  double total = 0.0;
  for (double v : m.class_totals) total += v;
  m.average_class_size = total / static_cast<double>(C);
  m.weights = DenseMatrix<double>(C, T);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      if (tf(c, t) > 0.0) m.weights(c, t) = tf(c, t) * std::log(1.0 + m.average_class_size / m.term_frequency[t]);
  return m;
}

// Highest-weighted terms of a class; ties order by term. Zero weights are
// never returned.
inline std::vector<std::pair<std::string, double>> top_class_terms(const CTfIdfModel& m, int class_id, std::size_t n) {
  const auto r = m.class_row(class_id);
  if (!r) throw ConfigError("unknown class " + std::to_string(class_id));
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t t = 0; t < m.terms.size(); ++t)
    if (m.weights(*r, t) > 0.0) out.emplace_back(m.terms[t], m.weights(*r, t));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// MMR

struct MmrCandidate {
  std::string term;
  double relevance = 0.0;
};

namespace detail {

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace detail

// Greedy maximal marginal relevance: each step picks the candidate maximizing
// lambda * relevance - (1 - lambda) * (max similarity to the picks so far).
// `vectors` holds one row per candidate; when empty, similarity is 1 for
// identical terms and 0 otherwise. For lambda < 1 a candidate whose vector
// exactly equals a picked one is skipped while any other remains. Ties go to
// the earlier candidate.
inline std::vector<std::string> mmr_select(std::span<const MmrCandidate> candidates, const DenseMatrix<float>& vectors,
                                           double lambda = 0.4, std::size_t n = 10) {
  const std::size_t m = candidates.size();
  const bool one_hot = vectors.empty();
  if (!one_hot && vectors.rows() != m) throw ConfigError("one vector per MMR candidate is required");
  auto sim = [&](std::size_t a, std::size_t b) {
    if (one_hot) return candidates[a].term == candidates[b].term ? 1.0 : 0.0;
    return detail::cosine(vectors.row(a), vectors.row(b));
  };
  auto duplicate = [&](std::size_t a, std::size_t b) {
    if (one_hot) return candidates[a].term == candidates[b].term;
    return std::equal(vectors.row(a).begin(), vectors.row(a).end(), vectors.row(b).begin());
  };
  std::vector<std::size_t> picked;
  std::vector<char> used(m, 0);
  n = std::min(n, m);
  while (picked.size() < n) {
    bool any_fresh = false;
    if (lambda < 1.0)
      for (std::size_t c = 0; c < m && !any_fresh; ++c) {
        if (used[c]) continue;
        any_fresh = std::none_of(picked.begin(), picked.end(), [&](std::size_t p) { return duplicate(c, p); });
      }
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (used[c]) continue;
      if (any_fresh && std::any_of(picked.begin(), picked.end(), [&](std::size_t p) { return duplicate(c, p); }))
        continue;
      double redundancy = 0.0;
      bool first = true;
      for (auto p : picked) {
        const double s = sim(c, p);
        redundancy = first ? s : std::max(redundancy, s);
        first = false;
      }
      const double score = lambda * candidates[c].relevance - (1.0 - lambda) * redundancy;
      if (!best || score > best_score) {
        best = c;
        best_score = score;
      }
    }
    used[*best] = 1;
    picked.push_back(*best);
  }
  std::vector<std::string> out;
  for (auto p : picked) out.push_back(candidates[p].term);
  return out;
}

// ---------------------------------------------------------------------------
// Representative documents

// Ranks a class's documents by cosine similarity between their n-gram count
// vectors and the class c-TF-IDF row; ties order by document id.
inline std::vector<std::string> representative_docs(const CTfIdfModel& m, int class_id,
                                                    std::span<const std::string> doc_ids,
                                                    std::span<const std::vector<std::string>> doc_tokens,
                                                    std::size_t n = 3, const VectorizerConfig& config = {}) {
  const auto r = m.class_row(class_id);
  if (!r) throw ConfigError("unknown class " + std::to_string(class_id));
  const auto row = m.weights.row(*r);
  double class_norm = 0.0;
  for (double w : row) class_norm += w * w;
  class_norm = std::sqrt(class_norm);
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t d = 0; d < doc_ids.size(); ++d) {
    std::map<std::size_t, double> counts;
    for (const auto& g : ngrams(doc_tokens[d], config.ngram_min, config.ngram_max)) {
      auto it = m.term_index.find(g);
      if (it != m.term_index.end()) counts[it->second] += 1.0;
    }
    double dot = 0.0, norm = 0.0;
    for (const auto& [t, c] : counts) {
      dot += c * row[t];
      norm += c * c;
    }
    const double cos = norm > 0.0 && class_norm > 0.0 ? dot / (std::sqrt(norm) * class_norm) : 0.0;
    scored.emplace_back(cos, doc_ids[d]);
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Labels

struct LabelerConfig {
  bool enabled = false;
  std::string url;
  std::string api_key;
  std::string model = "gpt-4o-mini";
  std::string prompt_template;
  std::size_t max_concurrency = 4;
  std::chrono::seconds timeout{60};

  static LabelerConfig from_env() {
    LabelerConfig c;
    if (const char* u = std::getenv("LLM_API_URL")) c.url = u;
    if (const char* k = std::getenv("LLM_API_KEY")) c.api_key = k;
    if (const char* m = std::getenv("LLM_MODEL")) c.model = m;
    c.enabled = !c.url.empty();
    return c;
  }
};

// Sends a chat request body and returns the raw response body.
using ChatTransport = std::function<std::string(const json& request)>;

struct TopicLabel {
  std::string label;
  std::string summary;
  bool generated = false;  // false when the fallback was used
};

inline std::string fallback_label(int topic_id, std::span<const std::string> keywords) {
  std::string out = std::to_string(topic_id);
  for (std::size_t i = 0; i < std::min<std::size_t>(4, keywords.size()); ++i) {
    std::string k = keywords[i];
    std::replace(k.begin(), k.end(), ' ', '_');
    out += "_" + k;
  }
  return out;
}

inline std::string fill_prompt(std::string_view tmpl, std::span<const std::string> keywords,
                               std::span<const std::string> documents) {
  std::string kw, docs;
  for (std::size_t i = 0; i < keywords.size(); ++i) kw += (i ? ", " : "") + keywords[i];
  for (const auto& d : documents) docs += "- " + d + "\n";
  std::string out(tmpl);
  auto replace = [&out](std::string_view key, const std::string& value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
      out.replace(pos, key.size(), value);
  };
  replace("{keywords}", kw);
  replace("{documents}", docs);
  return out;
}

inline json chat_request(const LabelerConfig& config, const std::string& prompt) {
  return json{{"model", config.model},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"response_format", json{{"type", "json_object"}}}};
}

// Accepts {label, summary} at the top level or inside an OpenAI-style
// choices[0].message.content string.
inline std::optional<std::pair<std::string, std::string>> parse_label_response(std::string_view body) {
  auto extract = [](const json& j) -> std::optional<std::pair<std::string, std::string>> {
    if (!j.is_object() || !j.contains("label") || !j["label"].is_string()) return std::nullopt;
    auto label = j["label"].get<std::string>();
    if (label.find_first_not_of(" \t\r\n") == std::string::npos) return std::nullopt;
    std::string summary = j.contains("summary") && j["summary"].is_string() ? j["summary"].get<std::string>() : "";
    return std::pair(label, summary);
  };
  try {
    const auto j = json::parse(body);
    if (auto direct = extract(j)) return direct;
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
      const auto& content = j["choices"][0]["message"]["content"];
      if (content.is_string()) return extract(json::parse(content.get<std::string>()));
    }
  } catch (const json::exception&) {
  }
  return std::nullopt;
}

inline ChatTransport http_chat_transport(const LabelerConfig& config) {
  const auto scheme_end = config.url.find("://");
  const auto path_start = config.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = config.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config.url.substr(path_start);
  const auto key = config.api_key;
  const auto timeout = config.timeout;
  return [origin, path, key, timeout](const json& request) {
    httplib::Client client(origin);
    client.set_read_timeout(timeout);
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    auto res = client.Post(path, headers, request.dump(), "application/json");
    if (!res) throw Error("chat request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("chat endpoint returned HTTP " + std::to_string(res->status));
    return res->body;
  };
}

// Never throws for transport or parse problems; those yield the fallback.
inline TopicLabel llm_label(int topic_id, std::span<const std::string> keywords, std::span<const std::string> documents,
                            const LabelerConfig& config, const ChatTransport& transport) {
  TopicLabel out{fallback_label(topic_id, keywords), "", false};
  if (!config.enabled || !transport) return out;
  try {
    const auto body = transport(chat_request(config, fill_prompt(config.prompt_template, keywords, documents)));
    if (auto parsed = parse_label_response(body)) {
      out.label = parsed->first;
      out.summary = parsed->second;
      out.generated = true;
    } else {
      spdlog::warn("topic {}: unusable label response; using fallback", topic_id);
    }
  } catch (const std::exception& e) {
    spdlog::warn("topic {}: labeling failed ({}); using fallback", topic_id, e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assembled representation

struct TopicRepresentation {
  int topic_id = 0;
  std::vector<std::string> keywords;
  std::vector<std::pair<std::string, double>> raw_terms;
  std::string label;
  std::string summary;
  std::vector<std::string> representative_doc_ids;
  std::size_t size = 0;
  std::string mmr_similarity = "one_hot";  // or "embedding"
  bool label_generated = false;
};

inline void to_json(json& j, const TopicRepresentation& t) {
  json raw = json::array();
  for (const auto& [term, w] : t.raw_terms) raw.push_back({{"term", term}, {"weight", w}});
  j = json{{"topic_id", t.topic_id},
           {"keywords", t.keywords},
           {"raw_ctfidf_terms", raw},
           {"label", t.label},
           {"summary", t.summary},
           {"representative_doc_ids", t.representative_doc_ids},
           {"size", t.size},
           {"mmr_similarity", t.mmr_similarity},
           {"label_generated", t.label_generated}};
}
inline void from_json(const json& j, TopicRepresentation& t) {
  t.topic_id = j.at("topic_id").get<int>();
  t.keywords = j.at("keywords").get<std::vector<std::string>>();
  t.raw_terms.clear();
  for (const auto& r : j.value("raw_ctfidf_terms", json::array()))
    t.raw_terms.emplace_back(r.at("term").get<std::string>(), r.at("weight").get<double>());
  t.label = j.value("label", "");
  t.summary = j.value("summary", "");
  t.representative_doc_ids = j.value("representative_doc_ids", std::vector<std::string>{});
  t.size = j.value("size", std::size_t{0});
  t.mmr_similarity = j.value("mmr_similarity", std::string("one_hot"));
  t.label_generated = j.value("label_generated", false);
}

struct RepresentConfig {
  VectorizerConfig vectorizer;
  std::size_t candidates = 30;
  std::size_t keywords = 10;
  double mmr_lambda = 0.4;
  std::size_t representative_docs = 3;
};

// Embeds terms for MMR; returns one row per term, or an empty matrix when
// unavailable.
using TermEmbedder = std::function<DenseMatrix<float>(const std::vector<std::string>&)>;

// Builds one representation per non-noise cluster. Without a term embedder
// the relevance is the c-TF-IDF weight scaled by the topic's maximum.
inline std::vector<TopicRepresentation> represent_topics(std::span<const std::string> doc_ids,
                                                         std::span<const std::vector<std::string>> doc_tokens,
                                                         std::span<const std::string> doc_texts,
                                                         std::span<const int> labels, const RepresentConfig& config,
                                                         const LabelerConfig& labeler = {},
                                                         const ChatTransport& transport = {},
                                                         const TermEmbedder& embedder = {}) {
  const auto model = ctfidf(doc_tokens, labels, config.vectorizer);
  std::vector<TopicRepresentation> out(model.class_ids.size());
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t d = 0; d < labels.size(); ++d)
    if (labels[d] >= 0) members[labels[d]].push_back(d);

  for (std::size_t c = 0; c < model.class_ids.size(); ++c) {
    const int id = model.class_ids[c];
    auto& rep = out[c];
    rep.topic_id = id;
    rep.size = members[id].size();
    rep.raw_terms = top_class_terms(model, id, config.candidates);
    std::vector<MmrCandidate> cands;
    const double top = rep.raw_terms.empty() ? 1.0 : rep.raw_terms.front().second;
    std::vector<std::string> terms;
    for (const auto& [t, w] : rep.raw_terms) {
      cands.push_back({t, w / top});
      terms.push_back(t);
    }
    DenseMatrix<float> vectors;
    if (embedder && !terms.empty()) {
      try {
        vectors = embedder(terms);
        if (vectors.rows() != terms.size()) vectors = {};
      } catch (const std::exception& e) {
        spdlog::warn("topic {}: term embedding failed ({}); using one-hot similarity", id, e.what());
        vectors = {};
      }
    }
    rep.mmr_similarity = vectors.empty() ? "one_hot" : "embedding";
    rep.keywords = mmr_select(cands, vectors, config.mmr_lambda, config.keywords);

    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> toks;
    for (auto d : members[id]) {
      ids.push_back(doc_ids[d]);
      toks.push_back(doc_tokens[d]);
    }
    rep.representative_doc_ids = representative_docs(model, id, ids, toks, config.representative_docs, config.vectorizer);
  }

  std::unordered_map<std::string, std::size_t> text_of;
  for (std::size_t d = 0; d < doc_ids.size(); ++d) text_of.emplace(doc_ids[d], d);
  const std::size_t workers = std::max<std::size_t>(1, labeler.max_concurrency);
  for (std::size_t start = 0; start < out.size(); start += workers) {
    std::vector<std::future<void>> batch;
    for (std::size_t c = start; c < std::min(out.size(), start + workers); ++c)
      batch.push_back(std::async(workers > 1 && labeler.enabled ? std::launch::async : std::launch::deferred, [&, c] {
        auto& rep = out[c];
        std::vector<std::string> texts;
        for (const auto& id : rep.representative_doc_ids)
          texts.push_back(doc_texts.empty() ? id : doc_texts[text_of.at(id)]);
        const auto label = llm_label(rep.topic_id, rep.keywords, texts, labeler, transport);
        rep.label = label.label;
        rep.summary = label.summary;
        rep.label_generated = label.generated;
      }));
    for (auto& f : batch) f.get();
  }
  return out;
}

}  // namespace crisis::represent
