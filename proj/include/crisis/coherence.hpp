#pragma once

// C_v topic coherence from boolean sliding-window co-occurrence statistics.

#include "crisis/common.hpp"

#include <json.hpp>

#include <mutex>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace crisis::coherence {

using nlohmann::json;

struct CoherenceConfig {
  std::size_t window_size = 110;
  std::size_t top_n = 10;
  double epsilon = 1e-12;

  void validate() const {
    if (window_size < 1) throw ConfigError("window_size must be >= 1");
    if (top_n < 2) throw ConfigError("top_n must be >= 2");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  }
};

// Window counts for a set of tracked terms.
class WindowStats {
 public:
  std::size_t num_windows() const { return windows_; }

  std::size_t count(std::string_view term) const {
    const auto i = index_of(term);
    return i ? counts_[*i] : 0;
  }
  std::size_t pair_count(std::string_view a, std::string_view b) const {
    const auto i = index_of(a), j = index_of(b);
    if (!i || !j) return 0;
    if (*i == *j) return counts_[*i];
    const auto it = pairs_.find(pair_key(*i, *j));
    return it == pairs_.end() ? 0 : it->second;
  }
  bool tracks(std::string_view term) const { return index_of(term).has_value(); }

  // Builds stats over token streams. When `targets` is non-empty only those
  // terms are tracked.
  static WindowStats build(std::span<const std::vector<std::string>> streams, std::size_t window_size,
                           const std::unordered_set<std::string>& targets = {}) {
    if (streams.empty()) throw ConfigError("coherence reference corpus is empty");
    if (window_size < 1) throw ConfigError("window_size must be >= 1");
    WindowStats s;
    if (targets.empty()) {
      for (const auto& doc : streams)
        for (const auto& t : doc) s.intern(t);
    } else {
      std::vector<std::string> sorted(targets.begin(), targets.end());
      std::sort(sorted.begin(), sorted.end());
      for (const auto& t : sorted) s.intern(t);
    }
    s.counts_.assign(s.terms_.size(), 0);

    std::mutex merge;
    parallel_for(streams.size(), [&](std::size_t begin, std::size_t end) {
      WindowStats local;
      local.counts_.assign(s.terms_.size(), 0);
      std::vector<int> in_window(s.terms_.size(), 0);
      std::vector<std::size_t> present;
      std::vector<long> ids;
      for (std::size_t d = begin; d < end; ++d) {
        const auto& doc = streams[d];
        if (doc.empty()) continue;
        ids.clear();
        for (const auto& t : doc) {
          const auto i = s.index_of(t);
          ids.push_back(i ? static_cast<long>(*i) : -1L);
        }
        const std::size_t w = std::min(window_size, ids.size());
        for (std::size_t p = 0; p < w; ++p)
          if (ids[p] >= 0) ++in_window[static_cast<std::size_t>(ids[p])];
        for (std::size_t start = 0;; ++start) {
          ++local.windows_;
          present.clear();
          for (std::size_t p = start; p < start + w; ++p)
            if (ids[p] >= 0 && in_window[static_cast<std::size_t>(ids[p])] > 0) {
              present.push_back(static_cast<std::size_t>(ids[p]));
            }
          std::sort(present.begin(), present.end());
          present.erase(std::unique(present.begin(), present.end()), present.end());
          for (std::size_t a = 0; a < present.size(); ++a) {
            ++local.counts_[present[a]];
            for (std::size_t b = a + 1; b < present.size(); ++b) ++local.pairs_[pair_key(present[a], present[b])];
          }
          if (start + w >= ids.size()) break;
          if (ids[start] >= 0) --in_window[static_cast<std::size_t>(ids[start])];
          if (ids[start + w] >= 0) ++in_window[static_cast<std::size_t>(ids[start + w])];
        }
        for (std::size_t p = ids.size() - w; p < ids.size(); ++p)
          if (ids[p] >= 0) --in_window[static_cast<std::size_t>(ids[p])];
      }
      std::lock_guard lock(merge);
      s.windows_ += local.windows_;
      for (std::size_t i = 0; i < local.counts_.size(); ++i) s.counts_[i] += local.counts_[i];
      for (const auto& [k, v] : local.pairs_) s.pairs_[k] += v;
    });
    return s;
  }

 private:
  static std::uint64_t pair_key(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return (static_cast<std::uint64_t>(i) << 32) | j;
  }
  void intern(const std::string& t) {
    if (index_.emplace(t, terms_.size()).second) terms_.push_back(t);
  }
  std::optional<std::size_t> index_of(std::string_view term) const {
    auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t windows_ = 0;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::uint64_t, std::size_t> pairs_;
};

// ln((P(i,j) + eps) / (P(i) P(j))) / -ln(P(i,j) + eps), clamped to [-1, 1].
inline double npmi(std::string_view a, std::string_view b, const WindowStats& stats, double epsilon = 1e-12) {
  const double m = static_cast<double>(stats.num_windows());
  const double pa = stats.count(a) / m, pb = stats.count(b) / m, pab = stats.pair_count(a, b) / m;
  if (pa == 0.0 || pb == 0.0) return 0.0;
  const double joint = pab + epsilon;
  if (joint >= 1.0) return 1.0;
  const double v = std::log(joint / (pa * pb)) / -std::log(joint);
  return std::clamp(v, -1.0, 1.0);
}

struct TopicScore {
  int topic_id = 0;
  std::optional<double> score;
  std::vector<std::string> dropped_words;
};

struct CoherenceReport {
  std::vector<TopicScore> per_topic;
  std::optional<double> mean;
};

inline json to_json_value(const CoherenceReport& r) {
  json topics = json::array();
  for (const auto& t : r.per_topic)
    topics.push_back({{"topic_id", t.topic_id},
                      {"score", t.score ? json(*t.score) : json(nullptr)},
                      {"dropped_words", t.dropped_words}});
  return json{{"per_topic", topics}, {"mean", r.mean ? json(*r.mean) : json(nullptr)}};
}

// Scores one word list: each word's context vector holds its NPMI against
// every word of the list; the score is the mean cosine between those vectors
// and their sum.
inline double cv_score(std::span<const std::string> words, const WindowStats& stats, double epsilon) {
  const std::size_t n = words.size();
  std::vector<std::vector<double>> ctx(n, std::vector<double>(n));
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      ctx[i][j] = npmi(words[i], words[j], stats, epsilon);
      total[j] += ctx[i][j];
    }
  double tn = 0.0;
  for (double v : total) tn += v * v;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, vn = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += ctx[i][j] * total[j];
      vn += ctx[i][j] * ctx[i][j];
    }
    sum += vn > 0.0 && tn > 0.0 ? std::clamp(dot / std::sqrt(vn * tn), -1.0, 1.0) : 0.0;
  }
  return sum / static_cast<double>(n);
}

// Words absent from the reference statistics are dropped; topics left with
// fewer than two words are reported without a score and excluded from the
// mean.
inline CoherenceReport cv_coherence(const std::vector<std::vector<std::string>>& topics, const WindowStats& stats,
                                    const CoherenceConfig& config = {}) {
  config.validate();
  CoherenceReport report;
  double sum = 0.0;
  std::size_t scored = 0;
  for (std::size_t t = 0; t < topics.size(); ++t) {
    TopicScore ts;
    ts.topic_id = static_cast<int>(t);
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < std::min(config.top_n, topics[t].size()); ++i) {
      if (stats.count(topics[t][i]) > 0)
        kept.push_back(topics[t][i]);
      else
        ts.dropped_words.push_back(topics[t][i]);
    }
    if (!ts.dropped_words.empty())
      spdlog::warn("coherence: topic {} dropped {} word(s) missing from the reference corpus", t, ts.dropped_words.size());
    if (kept.size() >= 2) {
      ts.score = cv_score(kept, stats, config.epsilon);
      sum += *ts.score;
      ++scored;
    } else {
      spdlog::warn("coherence: topic {} has fewer than two usable words; excluded", t);
    }
    report.per_topic.push_back(std::move(ts));
  }
  if (scored) report.mean = sum / static_cast<double>(scored);
  return report;
}

inline CoherenceReport cv_coherence(const std::vector<std::vector<std::string>>& topics,
                                    std::span<const std::vector<std::string>> streams,
                                    const CoherenceConfig& config = {}) {
  config.validate();
  std::unordered_set<std::string> targets;
  for (const auto& t : topics)
    for (std::size_t i = 0; i < std::min(config.top_n, t.size()); ++i) targets.insert(t[i]);
  if (targets.empty()) return cv_coherence(topics, WindowStats::build(streams, config.window_size, {""}), config);
  return cv_coherence(topics, WindowStats::build(streams, config.window_size, targets), config);
}

}  // namespace crisis::coherence
