#pragma once

// Hierarchical SA/CN category schema, keyword rules that map latent topics
// onto it, grief and mental-health lexicon flags, label propagation from
// topics to instances, and reviewer overrides.

#include "crisis/common.hpp"
#include "crisis/ingest.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <set>

namespace crisis::schema {

using nlohmann::json;
using LabelSet = std::set<std::string>;

inline const std::vector<std::string>& sa_categories() {
  static const std::vector<std::string> ids = {"fire_operations", "public_health_safety", "emergency_resources",
                                               "recovery",        "loss_damage",          "influential_figures"};
  return ids;
}
inline const std::vector<std::string>& cn_categories() {
  static const std::vector<std::string> ids = {"blame", "renewal", "victim", "hero"};
  return ids;
}

enum class Family { SA, CN };

inline std::string to_string(Family f) { return f == Family::SA ? "SA" : "CN"; }
inline Family parse_family(std::string_view s) {
  if (s == "SA") return Family::SA;
  if (s == "CN") return Family::CN;
  throw SchemaError("unknown family '" + std::string(s) + "'");
}

struct Category {
  std::string id;
  std::string name;
  std::vector<std::string> seeds;
};

struct Schema {
  std::vector<Category> sa;
  std::vector<Category> cn;

  const std::vector<Category>& family(Family f) const { return f == Family::SA ? sa : cn; }
  bool has(Family f, std::string_view id) const {
    const auto& cats = family(f);
    return std::any_of(cats.begin(), cats.end(), [&](const Category& c) { return c.id == id; });
  }
  // Category ids in schema order.
  std::vector<std::string> ids(Family f) const {
    std::vector<std::string> out;
    for (const auto& c : family(f)) out.push_back(c.id);
    return out;
  }
  json to_json_value() const {
    auto fam = [](const std::vector<Category>& cats) {
      json a = json::array();
      for (const auto& c : cats) a.push_back({{"id", c.id}, {"name", c.name}, {"seeds", c.seeds}});
      return a;
    };
    return json{{"families", {{"SA", fam(sa)}, {"CN", fam(cn)}}}};
  }
};

// Category sets must match the fixed enumeration exactly.
inline Schema parse_schema(const json& j) {
  Schema s;
  const auto& fams = j.at("families");
  for (Family f : {Family::SA, Family::CN}) {
    const auto key = to_string(f);
    if (!fams.contains(key) || !fams[key].is_array() || fams[key].empty())
      throw SchemaError("schema has no " + key + " categories");
    auto& out = f == Family::SA ? s.sa : s.cn;
    std::set<std::string> seen;
    for (const auto& c : fams[key]) {
      Category cat;
      cat.id = c.at("id").get<std::string>();
      cat.name = c.value("name", cat.id);
      cat.seeds = c.value("seeds", std::vector<std::string>{});
      if (!seen.insert(cat.id).second) throw SchemaError("duplicate category '" + cat.id + "'");
      out.push_back(std::move(cat));
    }
    const auto& expected = f == Family::SA ? sa_categories() : cn_categories();
    for (const auto& id : seen)
      if (std::find(expected.begin(), expected.end(), id) == expected.end())
        throw SchemaError("unknown " + key + " category '" + id + "'");
    for (const auto& id : expected)
      if (!seen.count(id)) throw SchemaError("schema is missing " + key + " category '" + id + "'");
  }
  return s;
}

inline Schema load_schema(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  try {
    return parse_schema(j);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Rules

enum class Flag { grief, mental_health };

struct RuleTarget {
  std::optional<Family> family;  // set for category targets
  std::string category;
  std::optional<Flag> flag;  // set for flag targets
};

struct MappingRule {
  std::string rule_id;
  RuleTarget target;
  LabelSet any_keywords;
  LabelSet all_keywords;
  int priority = 0;
};

namespace detail {

inline std::string fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Case-folded word tokens. Apostrophes are dropped without splitting, so
// "can't" and "cant" match.
inline std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '\'') continue;
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace detail

inline std::vector<MappingRule> parse_rules(const json& j, const Schema& schema) {
  std::vector<MappingRule> rules;
  std::set<int> priorities;
  std::set<std::string> ids;
  for (const auto& r : j.at("rules")) {
    MappingRule rule;
    rule.rule_id = r.at("rule_id").get<std::string>();
    rule.priority = r.at("priority").get<int>();
    const auto& t = r.at("target");
    if (t.contains("flag")) {
      const auto f = t["flag"].get<std::string>();
      if (f == "grief")
        rule.target.flag = Flag::grief;
      else if (f == "mental_health")
        rule.target.flag = Flag::mental_health;
      else
        throw SchemaError("rule " + rule.rule_id + ": unknown flag '" + f + "'");
    } else {
      rule.target.family = parse_family(t.at("family").get<std::string>());
      rule.target.category = t.at("category").get<std::string>();
      if (!schema.has(*rule.target.family, rule.target.category))
        throw SchemaError("rule " + rule.rule_id + " references unknown category '" + rule.target.category + "'");
    }
    auto normalized = [](const std::string& k) {
      const auto w = detail::words(k);
      return detail::join(w, 0, w.size());
    };
    for (const auto& k : r.value("any_keywords", std::vector<std::string>{})) rule.any_keywords.insert(normalized(k));
    for (const auto& k : r.value("all_keywords", std::vector<std::string>{})) rule.all_keywords.insert(normalized(k));
    rule.any_keywords.erase("");
    rule.all_keywords.erase("");
    if (rule.any_keywords.empty() && rule.all_keywords.empty())
      throw SchemaError("rule " + rule.rule_id + " has no keywords");
    if (!priorities.insert(rule.priority).second)
      throw SchemaError("rule " + rule.rule_id + " reuses priority " + std::to_string(rule.priority));
    if (!ids.insert(rule.rule_id).second) throw SchemaError("duplicate rule id " + rule.rule_id);
    rules.push_back(std::move(rule));
  }
  std::sort(rules.begin(), rules.end(), [](const auto& a, const auto& b) { return a.priority < b.priority; });
  return rules;
}

inline std::vector<MappingRule> load_rules(const std::filesystem::path& path, const Schema& schema) {
  try {
    return parse_rules(json::parse(read_file(path)), schema);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Topic mapping

enum class Provenance { automatic, human };

struct TopicLabelSet {
  int topic_id = 0;
  LabelSet sa;
  LabelSet cn;
  bool grief = false;
  bool mental_health = false;
  Provenance provenance = Provenance::automatic;
  std::vector<std::string> matched_rules;
  bool needs_review = false;
  bool sa_fallback = false;  // SA came from seed overlap, no rule fired

  bool same_labels(const TopicLabelSet& o) const {
    return sa == o.sa && cn == o.cn && grief == o.grief && mental_health == o.mental_health;
  }
  friend bool operator==(const TopicLabelSet&, const TopicLabelSet&) = default;
};

inline json labels_json(const TopicLabelSet& t) {
  return json{{"sa", t.sa}, {"cn", t.cn}, {"grief", t.grief}, {"mental_health", t.mental_health}};
}

inline void to_json(json& j, const TopicLabelSet& t) {
  j = labels_json(t);
  j["topic_id"] = t.topic_id;
  j["provenance"] = t.provenance == Provenance::human ? "human" : "auto";
  j["matched_rules"] = t.matched_rules;
  j["needs_review"] = t.needs_review;
  j["sa_fallback"] = t.sa_fallback;
}
inline void from_json(const json& j, TopicLabelSet& t) {
  t.topic_id = j.at("topic_id").get<int>();
  t.sa = j.at("sa").get<LabelSet>();
  t.cn = j.at("cn").get<LabelSet>();
  t.grief = j.at("grief").get<bool>();
  t.mental_health = j.at("mental_health").get<bool>();
  t.provenance = j.value("provenance", std::string("auto")) == "human" ? Provenance::human : Provenance::automatic;
  t.matched_rules = j.value("matched_rules", std::vector<std::string>{});
  t.needs_review = j.value("needs_review", false);
  t.sa_fallback = j.value("sa_fallback", false);
}

// Terms a rule can match: each keyword as given, each word of a keyword, and
// the words and adjacent word pairs of the label. All case-folded.
inline LabelSet topic_terms(std::span<const std::string> keywords, std::string_view label) {
  LabelSet terms;
  for (const auto& k : keywords) {
    const auto w = detail::words(k);
    if (w.empty()) continue;
    terms.insert(detail::join(w, 0, w.size()));
    terms.insert(w.begin(), w.end());
  }
  const auto lw = detail::words(label);
  for (std::size_t i = 0; i < lw.size(); ++i) {
    terms.insert(lw[i]);
    if (i + 1 < lw.size()) terms.insert(detail::join(lw, i, i + 2));
  }
  return terms;
}

inline bool rule_fires(const MappingRule& rule, const LabelSet& terms) {
  for (const auto& k : rule.all_keywords)
    if (!terms.count(k)) return false;
  if (rule.any_keywords.empty()) return true;
  return std::any_of(rule.any_keywords.begin(), rule.any_keywords.end(), [&](const auto& k) { return terms.count(k); });
}

// SA category whose seed words overlap the topic terms most. Ties go to
// schema order with loss_damage ranked last as the most generic category.
inline std::string fallback_sa(const Schema& schema, const LabelSet& terms) {
  std::vector<const Category*> order;
  for (const auto& c : schema.sa)
    if (c.id != "loss_damage") order.push_back(&c);
  for (const auto& c : schema.sa)
    if (c.id == "loss_damage") order.push_back(&c);
  const Category* best = nullptr;
  std::size_t best_overlap = 0;
  for (const auto* c : order) {
    LabelSet seed_terms;
    for (const auto& s : c->seeds) {
      const auto w = detail::words(s);
      if (w.empty()) continue;
      seed_terms.insert(detail::join(w, 0, w.size()));
      seed_terms.insert(w.begin(), w.end());
    }
    std::size_t overlap = 0;
    for (const auto& t : seed_terms) overlap += terms.count(t);
    if (!best || overlap > best_overlap) {
      best = c;
      best_overlap = overlap;
    }
  }
  return best->id;
}

// Rules are evaluated in ascending priority and every fired target
// accumulates. A topic no SA rule matches is queued for review with a
// provisional SA label from seed overlap.
inline TopicLabelSet map_topic(int topic_id, std::span<const std::string> keywords, std::string_view label,
                               std::span<const MappingRule> rules, const Schema& schema) {
  if (keywords.empty()) throw SchemaError("unrepresentable topic " + std::to_string(topic_id) + ": no keywords");
  const auto terms = topic_terms(keywords, label);
  TopicLabelSet out;
  out.topic_id = topic_id;
  for (const auto& rule : rules) {
    if (!rule_fires(rule, terms)) continue;
    out.matched_rules.push_back(rule.rule_id);
    if (rule.target.flag) {
      (*rule.target.flag == Flag::grief ? out.grief : out.mental_health) = true;
    } else {
      (*rule.target.family == Family::SA ? out.sa : out.cn).insert(rule.target.category);
    }
  }
  if (out.sa.empty()) {
    out.sa.insert(fallback_sa(schema, terms));
    out.sa_fallback = true;
    out.needs_review = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grief and mental-health lexicons

struct Lexicons {
  std::vector<std::vector<std::string>> grief;  // each entry as a word sequence
  std::vector<std::vector<std::string>> mental_health;

  static std::vector<std::vector<std::string>> parse(std::span<const std::string> lines) {
    std::vector<std::vector<std::string>> out;
    for (const auto& l : lines) {
      auto w = detail::words(l);
      if (!w.empty()) out.push_back(std::move(w));
    }
    return out;
  }
  static Lexicons load(const std::filesystem::path& grief_file, const std::filesystem::path& mh_file) {
    Lexicons lx;
    lx.grief = parse(read_word_list(grief_file));
    lx.mental_health = parse(read_word_list(mh_file));
    return lx;
  }
};

namespace detail {

inline bool contains_phrase(const std::vector<std::string>& text, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > text.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= text.size(); ++i)
    if (std::equal(phrase.begin(), phrase.end(), text.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  return false;
}

inline bool any_hit(const std::vector<std::vector<std::string>>& texts,
                    const std::vector<std::vector<std::string>>& lexicon) {
  for (const auto& t : texts)
    for (const auto& entry : lexicon)
      if (contains_phrase(t, entry)) return true;
  return false;
}

}  // namespace detail

struct Flags {
  bool grief = false;
  bool mental_health = false;
  friend bool operator==(const Flags&, const Flags&) = default;
};

// Each text and each keyword is matched independently, so phrases never
// span two documents.
inline Flags flag_grief_mh(std::span<const std::string> texts, std::span<const std::string> keywords,
                           const Lexicons& lexicons) {
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& t : texts) tokenized.push_back(detail::words(t));
  for (const auto& k : keywords) tokenized.push_back(detail::words(k));
  return {detail::any_hit(tokenized, lexicons.grief), detail::any_hit(tokenized, lexicons.mental_health)};
}

// Rule mapping plus lexicon flags over representative texts and keywords.
inline TopicLabelSet label_topic(int topic_id, std::span<const std::string> keywords, std::string_view label,
                                 std::span<const std::string> representative_texts, std::span<const MappingRule> rules,
                                 const Schema& schema, const Lexicons& lexicons) {
  auto out = map_topic(topic_id, keywords, label, rules, schema);
  const auto f = flag_grief_mh(representative_texts, keywords, lexicons);
  out.grief = out.grief || f.grief;
  out.mental_health = out.mental_health || f.mental_health;
  return out;
}

// ---------------------------------------------------------------------------
// Reviewer overrides

struct Override {
  LabelSet sa;
  LabelSet cn;
  bool grief = false;
  bool mental_health = false;
  friend bool operator==(const Override&, const Override&) = default;
};

using Overrides = std::map<int, Override>;

struct UnknownTopicError : SchemaError {
  explicit UnknownTopicError(std::vector<int> unknown)
      : SchemaError("override references unknown topic id(s): " + list(unknown)), ids(std::move(unknown)) {}
  std::vector<int> ids;

 private:
  static std::string list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s;
  }
};

inline Override parse_override(const json& j, const Schema& schema) {
  if (!j.is_object()) throw SchemaError("override must be an object");
  Override o;
  o.sa = j.value("sa", LabelSet{});
  o.cn = j.value("cn", LabelSet{});
  o.grief = j.value("grief", false);
  o.mental_health = j.value("mental_health", false);
  if (o.sa.empty()) throw SchemaError("override must carry at least one SA category");
  for (const auto& c : o.sa)
    if (!schema.has(Family::SA, c)) throw SchemaError("unknown SA category '" + c + "'");
  for (const auto& c : o.cn)
    if (!schema.has(Family::CN, c)) throw SchemaError("unknown CN category '" + c + "'");
  return o;
}

inline json to_json_value(const Override& o) {
  return json{{"sa", o.sa}, {"cn", o.cn}, {"grief", o.grief}, {"mental_health", o.mental_health}};
}

// {"<topic_id>": {sa, cn, grief, mental_health}, ...}
inline Overrides parse_overrides(const json& j, const Schema& schema) {
  if (!j.is_object()) throw SchemaError("override file must be a JSON object keyed by topic id");
  Overrides out;
  for (const auto& [key, value] : j.items()) {
    std::size_t used = 0;
    int id = 0;
    try {
      id = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || key.empty()) throw SchemaError("override key '" + key + "' is not a topic id");
    try {
      out[id] = parse_override(value, schema);
    } catch (const json::exception& e) {
      throw SchemaError("override for topic " + key + ": " + e.what());
    }
  }
  return out;
}

inline json overrides_json(const Overrides& o) {
  json j = json::object();
  for (const auto& [id, ov] : o) j[std::to_string(id)] = to_json_value(ov);
  return j;
}

inline Overrides load_overrides(const std::filesystem::path& path, const Schema& schema) {
  if (!std::filesystem::exists(path)) return {};
  const auto text = read_file(path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  try {
    return parse_overrides(json::parse(text), schema);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// Each override replaces its topic's automatic set entirely.
inline std::vector<TopicLabelSet> apply_review(std::span<const TopicLabelSet> automatic, const Overrides& overrides) {
  std::vector<int> unknown;
  for (const auto& [id, o] : overrides)
    if (std::none_of(automatic.begin(), automatic.end(), [&](const TopicLabelSet& t) { return t.topic_id == id; }))
      unknown.push_back(id);
  if (!unknown.empty()) throw UnknownTopicError(unknown);
  std::vector<TopicLabelSet> out(automatic.begin(), automatic.end());
  for (auto& t : out) {
    const auto it = overrides.find(t.topic_id);
    if (it == overrides.end()) continue;
    t.sa = it->second.sa;
    t.cn = it->second.cn;
    t.grief = it->second.grief;
    t.mental_health = it->second.mental_health;
    t.provenance = Provenance::human;
    t.needs_review = false;
    t.sa_fallback = false;
  }
  return out;
}

// Both versions side by side for diffing.
inline json review_json(std::span<const TopicLabelSet> automatic, std::span<const TopicLabelSet> final_sets) {
  json topics = json::array();
  for (std::size_t i = 0; i < automatic.size(); ++i)
    topics.push_back({{"topic_id", automatic[i].topic_id}, {"auto", automatic[i]}, {"final", final_sets[i]}});
  return topics;
}

// ---------------------------------------------------------------------------
// Propagation

struct InstanceRef {
  std::string id;
  ingest::RecordKind kind = ingest::RecordKind::comment;
  int topic_id = -1;  // dominant LDA topic for posts, cluster for comments
  std::optional<std::string> link_id;
};

struct InstanceLabels {
  std::string instance_id;
  ingest::RecordKind kind = ingest::RecordKind::comment;
  int topic_id = -1;
  LabelSet sa;
  LabelSet cn;
  bool grief = false;
  bool mental_health = false;
  bool inherited = false;

  friend bool operator==(const InstanceLabels&, const InstanceLabels&) = default;
};

inline void to_json(json& j, const InstanceLabels& l) {
  j = json{{"instance_id", l.instance_id}, {"kind", ingest::to_string(l.kind)},
           {"topic_id", l.topic_id},       {"sa", l.sa},
           {"cn", l.cn},                   {"grief", l.grief},
           {"mental_health", l.mental_health}, {"inherited", l.inherited}};
}
inline void from_json(const json& j, InstanceLabels& l) {
  l.instance_id = j.at("instance_id").get<std::string>();
  l.kind = ingest::parse_kind(j.at("kind").get<std::string>());
  l.topic_id = j.at("topic_id").get<int>();
  l.sa = j.at("sa").get<LabelSet>();
  l.cn = j.at("cn").get<LabelSet>();
  l.grief = j.at("grief").get<bool>();
  l.mental_health = j.at("mental_health").get<bool>();
  l.inherited = j.at("inherited").get<bool>();
}

struct Propagation {
  std::vector<InstanceLabels> labels;  // input order
  std::size_t unresolved_parents = 0;
  std::size_t inherited = 0;
};

namespace detail {

struct LabelTuple {
  LabelSet sa, cn;
  bool grief = false, mental_health = false;
  auto operator<=>(const LabelTuple&) const = default;
};

inline void assign(InstanceLabels& l, const LabelTuple& t) {
  l.sa = t.sa;
  l.cn = t.cn;
  l.grief = t.grief;
  l.mental_health = t.mental_health;
}

inline LabelTuple tuple_of(const TopicLabelSet& s) { return {s.sa, s.cn, s.grief, s.mental_health}; }

}  // namespace detail

// Posts take their topic's labels, comments their cluster's. Noise comments
// and comments in unlabeled clusters inherit the root post's labels. When
// the root cannot be resolved the corpus default applies: the most common
// post label set, or {loss_damage} when there are no posts.
inline Propagation propagate_labels(std::span<const InstanceRef> instances,
                                    const std::map<int, TopicLabelSet>& post_topics,
                                    const std::map<int, TopicLabelSet>& comment_topics) {
  Propagation out;
  out.labels.resize(instances.size());
  std::map<std::string, std::size_t> post_index;
  std::map<detail::LabelTuple, std::size_t> post_freq;
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& in = instances[i];
    auto& l = out.labels[i];
    l.instance_id = in.id;
    l.kind = in.kind;
    l.topic_id = in.topic_id;
    if (in.kind == ingest::RecordKind::post) {
      post_index[in.id] = i;
      const auto it = post_topics.find(in.topic_id);
      if (it != post_topics.end()) {
        detail::assign(l, detail::tuple_of(it->second));
        ++post_freq[detail::tuple_of(it->second)];
        continue;
      }
    } else {
      const auto it = in.topic_id >= 0 ? comment_topics.find(in.topic_id) : comment_topics.end();
      if (it != comment_topics.end()) {
        detail::assign(l, detail::tuple_of(it->second));
        continue;
      }
    }
    pending.push_back(i);
  }
  detail::LabelTuple fallback{{"loss_damage"}, {}, false, false};
  std::size_t best = 0;
  for (const auto& [t, n] : post_freq)
    if (n > best) {
      best = n;
      fallback = t;
    }
  for (std::size_t i : pending) {
    auto& l = out.labels[i];
    l.inherited = true;
    ++out.inherited;
    const auto& in = instances[i];
    if (in.kind == ingest::RecordKind::comment && in.link_id) {
      const auto root = post_index.find(ingest::strip_thing_prefix(*in.link_id));
      if (root != post_index.end() && !out.labels[root->second].sa.empty()) {
        const auto& r = out.labels[root->second];
        detail::assign(l, {r.sa, r.cn, r.grief, r.mental_health});
        continue;
      }
    }
    detail::assign(l, fallback);
    ++out.unresolved_parents;
  }
  if (out.unresolved_parents)
    spdlog::warn("propagation: {} instance(s) without a resolvable labeled parent took the corpus default",
                 out.unresolved_parents);
  return out;
}

}  // namespace crisis::schema
