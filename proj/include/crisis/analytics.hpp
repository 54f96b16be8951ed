#pragma once

// Aggregate analyses over labeled instances: exclusive set intersections,
// daily series and time-of-day segments in a local time zone, per-fire
// partitions, and URL domain rankings per SA category.

#include "crisis/common.hpp"
#include "crisis/ingest.hpp"
#include "crisis/schema.hpp"

#include <absl/time/civil_time.h>
#include <absl/time/time.h>
#include <json.hpp>

#include <map>
#include <set>

namespace crisis::analytics {

using nlohmann::json;
using schema::LabelSet;

struct LabeledInstance {
  std::string id;
  std::int64_t created_utc = 0;
  std::string subreddit;
  std::vector<std::string> tokens;
  LabelSet sa;
  LabelSet cn;
  bool grief = false;
  bool mental_health = false;
};

// Which instances form the denominator of grief and mental-health rates.
enum class Denominator { cn_labeled, all };

// ---------------------------------------------------------------------------
// Exclusive intersections

struct Intersection {
  std::vector<std::string> labels;  // family order
  std::size_t count = 0;
};

struct IntersectionTable {
  std::vector<std::string> categories;
  std::vector<std::size_t> set_sizes;  // parallel to categories
  std::vector<Intersection> exclusive;  // count desc, then label string asc
  std::size_t labeled_instances = 0;

  std::size_t set_size(std::string_view c) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
      if (categories[i] == c) return set_sizes[i];
    return 0;
  }
  std::size_t exclusive_count(const LabelSet& labels) const {
    for (const auto& x : exclusive)
      if (LabelSet(x.labels.begin(), x.labels.end()) == labels) return x.count;
    return 0;
  }
};

inline std::string join_labels(const std::vector<std::string>& labels, char sep = '|') {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += sep;
    out += labels[i];
  }
  return out;
}

// Each instance counts toward exactly the intersection equal to its full
// label set. Instances without labels in the family are skipped.
inline IntersectionTable upset_intersections(std::span<const LabelSet> labels, const std::vector<std::string>& family) {
  IntersectionTable t;
  t.categories = family;
  t.set_sizes.assign(family.size(), 0);
  std::map<std::vector<std::string>, std::size_t> exact;
  for (const auto& set : labels) {
    if (set.empty()) continue;
    std::vector<std::string> ordered;
    for (std::size_t c = 0; c < family.size(); ++c)
      if (set.count(family[c])) {
        ordered.push_back(family[c]);
        ++t.set_sizes[c];
      }
    if (ordered.size() != set.size()) {
      for (const auto& l : set)
        if (std::find(family.begin(), family.end(), l) == family.end())
          throw SchemaError("label '" + l + "' is outside the category family");
    }
    ++exact[ordered];
    ++t.labeled_instances;
  }
  for (auto& [k, n] : exact) t.exclusive.push_back({k, n});
  std::sort(t.exclusive.begin(), t.exclusive.end(), [](const Intersection& a, const Intersection& b) {
    return a.count != b.count ? a.count > b.count : join_labels(a.labels) < join_labels(b.labels);
  });
  return t;
}

// ---------------------------------------------------------------------------
// Time

inline absl::TimeZone load_time_zone(const std::string& name) {
  absl::TimeZone tz;
  if (name.empty() || !absl::LoadTimeZone(name, &tz)) throw ConfigError("unknown time zone '" + name + "'");
  return tz;
}

inline absl::CivilSecond local_time(std::int64_t utc_seconds, const absl::TimeZone& tz) {
  return absl::ToCivilSecond(absl::FromUnixSeconds(utc_seconds), tz);
}

inline std::string local_date(std::int64_t utc_seconds, const absl::TimeZone& tz) {
  return absl::FormatCivilTime(absl::CivilDay(local_time(utc_seconds, tz)));
}

struct DayBucket {
  std::string date;  // YYYY-MM-DD local
  std::size_t total = 0;
  std::size_t grief_count = 0;
  std::size_t mh_count = 0;
  double grief_pct = 0.0;
  double mh_pct = 0.0;
};

struct TimeSeries {
  std::string time_zone;
  std::vector<DayBucket> days;  // ascending date
};

namespace detail {

inline bool counted(const LabeledInstance& x, Denominator d) { return d == Denominator::all || !x.cn.empty(); }

inline double pct(std::size_t part, std::size_t whole) {
  return whole ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

}  // namespace detail

inline TimeSeries temporal_bins(std::span<const LabeledInstance> instances, const std::string& time_zone,
                                Denominator denominator = Denominator::cn_labeled) {
  const auto tz = load_time_zone(time_zone);
  std::map<std::string, DayBucket> days;
  for (const auto& x : instances) {
    if (!detail::counted(x, denominator)) continue;
    auto& b = days[local_date(x.created_utc, tz)];
    ++b.total;
    b.grief_count += x.grief;
    b.mh_count += x.mental_health;
  }
  TimeSeries ts;
  ts.time_zone = time_zone;
  for (auto& [date, b] : days) {
    b.date = date;
    b.grief_pct = detail::pct(b.grief_count, b.total);
    b.mh_pct = detail::pct(b.mh_count, b.total);
    ts.days.push_back(b);
  }
  return ts;
}

struct SegmentBoundary {
  std::string name;
  int start_minute = 0;  // local minutes after midnight
};

struct SegmentConfig {
  std::vector<SegmentBoundary> segments = {{"morning", 6 * 60}, {"afternoon", 12 * 60}, {"evening", 18 * 60},
                                           {"night", 0}};

  // Starts must be distinct minutes of the day; each segment runs until the
  // next start, the last one wrapping past midnight.
  void validate() const {
    if (segments.empty()) throw ConfigError("no time-of-day segments");
    std::set<int> starts;
    std::set<std::string> names;
    for (const auto& s : segments) {
      if (s.start_minute < 0 || s.start_minute >= 24 * 60) throw ConfigError("segment start outside the day");
      if (!starts.insert(s.start_minute).second) throw ConfigError("overlapping segment boundaries at " + s.name);
      if (!names.insert(s.name).second) throw ConfigError("duplicate segment " + s.name);
    }
  }
  std::size_t segment_of(int minute) const {
    std::size_t best = segments.size(), last = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (segments[i].start_minute <= minute && (best == segments.size() ||
                                                  segments[i].start_minute > segments[best].start_minute))
        best = i;
      if (segments[i].start_minute > segments[last].start_minute) last = i;
    }
    return best == segments.size() ? last : best;
  }
};

struct SegmentStats {
  std::string name;
  std::size_t total = 0;
  std::size_t grief_count = 0;
  std::size_t mh_count = 0;
  double grief_pct = 0.0;
  double mh_pct = 0.0;
};

struct SegmentSummary {
  std::vector<SegmentStats> segments;  // config order
};

inline SegmentSummary time_of_day_segments(std::span<const LabeledInstance> instances, const std::string& time_zone,
                                           const SegmentConfig& config = {},
                                           Denominator denominator = Denominator::cn_labeled) {
  config.validate();
  const auto tz = load_time_zone(time_zone);
  SegmentSummary out;
  for (const auto& s : config.segments) out.segments.push_back({s.name});
  for (const auto& x : instances) {
    if (!detail::counted(x, denominator)) continue;
    const auto t = local_time(x.created_utc, tz);
    auto& s = out.segments[config.segment_of(t.hour() * 60 + t.minute())];
    ++s.total;
    s.grief_count += x.grief;
    s.mh_count += x.mental_health;
  }
  for (auto& s : out.segments) {
    s.grief_pct = detail::pct(s.grief_count, s.total);
    s.mh_pct = detail::pct(s.mh_count, s.total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fires

struct FireRule {
  std::string name;
  std::set<std::string> subreddits;  // case-folded
  std::vector<std::vector<std::string>> keywords;  // word sequences
};

struct FireMap {
  std::vector<FireRule> fires;  // name order

  static FireMap parse(const json& j) {
    FireMap m;
    for (const auto& [name, v] : j.at("fires").items()) {
      FireRule r;
      r.name = name;
      for (const auto& s : v.value("subreddits", std::vector<std::string>{})) r.subreddits.insert(schema::detail::fold(s));
      for (const auto& k : v.value("keywords", std::vector<std::string>{})) {
        auto w = schema::detail::words(k);
        if (!w.empty()) r.keywords.push_back(std::move(w));
      }
      m.fires.push_back(std::move(r));
    }
    if (m.fires.size() != 2) throw ConfigError("fire map must name exactly two fires");
    return m;
  }
  static FireMap load(const std::filesystem::path& path) {
    try {
      return parse(json::parse(read_file(path)));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  std::vector<std::string> classes() const {
    return {fires[0].name + "_only", fires[1].name + "_only", "both", "other"};
  }
};

struct FirePartition {
  std::vector<std::string> instance_class;  // parallel to input
  std::vector<std::pair<std::string, std::size_t>> counts;  // FireMap::classes order
};

// Union of subreddit origin and fire-name mentions decides the class.
inline FirePartition partition_by_fire(std::span<const LabeledInstance> instances, const FireMap& map) {
  const auto names = map.classes();
  FirePartition out;
  std::vector<std::size_t> counts(names.size(), 0);
  for (const auto& x : instances) {
    const auto sub = schema::detail::fold(x.subreddit);
    bool hit[2] = {false, false};
    for (std::size_t f = 0; f < 2; ++f) {
      const auto& rule = map.fires[f];
      hit[f] = rule.subreddits.count(sub) > 0;
      for (const auto& k : rule.keywords)
        if (!hit[f]) hit[f] = schema::detail::contains_phrase(x.tokens, k);
    }
    const std::size_t cls = hit[0] && hit[1] ? 2 : hit[0] ? 0 : hit[1] ? 1 : 3;
    out.instance_class.push_back(names[cls]);
    ++counts[cls];
  }
  for (std::size_t i = 0; i < names.size(); ++i) out.counts.emplace_back(names[i], counts[i]);
  return out;
}

// ---------------------------------------------------------------------------
// URLs

struct DomainCount {
  std::string domain;
  std::size_t count = 0;
  bool is_health = false;
};

struct UrlReport {
  std::vector<std::pair<std::string, std::vector<DomainCount>>> per_category;  // schema order
  std::vector<DomainCount> overall;
  std::vector<std::pair<std::string, std::size_t>> health_mentions_by_category;
};

inline bool is_health_domain(std::string_view domain, std::span<const std::string> health_domains) {
  for (const auto& h : health_domains) {
    if (domain == h) return true;
    if (domain.size() > h.size() && domain.ends_with(h) && domain[domain.size() - h.size() - 1] == '.') return true;
  }
  return false;
}

// Each mention counts once under every SA category of its source instance;
// mentions from unlabeled instances are skipped. Ranking is count desc,
// domain asc.
inline UrlReport url_rank(std::span<const ingest::UrlMention> mentions, const std::map<std::string, LabelSet>& sa_by_id,
                          const std::vector<std::string>& sa_categories, std::span<const std::string> health_domains) {
  std::map<std::string, std::map<std::string, std::size_t>> per;
  std::map<std::string, std::size_t> overall;
  for (const auto& m : mentions) {
    const auto it = sa_by_id.find(m.source_id);
    if (it == sa_by_id.end() || m.domain.empty()) continue;
    ++overall[m.domain];
    for (const auto& c : it->second) ++per[c][m.domain];
  }
  auto ranked = [&](const std::map<std::string, std::size_t>& counts) {
    std::vector<DomainCount> v;
    for (const auto& [d, n] : counts) v.push_back({d, n, is_health_domain(d, health_domains)});
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
    return v;
  };
  UrlReport r;
  for (const auto& c : sa_categories) {
    r.per_category.emplace_back(c, ranked(per[c]));
    std::size_t health = 0;
    for (const auto& d : r.per_category.back().second)
      if (d.is_health) health += d.count;
    r.health_mentions_by_category.emplace_back(c, health);
  }
  r.overall = ranked(overall);
  return r;
}

// ---------------------------------------------------------------------------
// Report

struct AnalyticsConfig {
  std::string time_zone = "America/Los_Angeles";
  SegmentConfig segments;
  Denominator denominator = Denominator::cn_labeled;
};

struct Report {
  IntersectionTable upset_sa;
  IntersectionTable upset_cn;
  TimeSeries timeseries;
  SegmentSummary segments;
  FirePartition fires;
  UrlReport urls;
  std::size_t instances = 0;
  std::size_t grief = 0;
  std::size_t mental_health = 0;
};

inline Report analyze(std::span<const LabeledInstance> instances, std::span<const ingest::UrlMention> mentions,
                      const schema::Schema& schema, const FireMap& fires, std::span<const std::string> health_domains,
                      const AnalyticsConfig& config = {}) {
  Report r;
  std::vector<LabelSet> sa, cn;
  std::map<std::string, LabelSet> sa_by_id;
  for (const auto& x : instances) {
    sa.push_back(x.sa);
    cn.push_back(x.cn);
    sa_by_id[x.id] = x.sa;
    r.grief += x.grief;
    r.mental_health += x.mental_health;
  }
  r.instances = instances.size();
  r.upset_sa = upset_intersections(sa, schema.ids(schema::Family::SA));
  r.upset_cn = upset_intersections(cn, schema.ids(schema::Family::CN));
  r.timeseries = temporal_bins(instances, config.time_zone, config.denominator);
  r.segments = time_of_day_segments(instances, config.time_zone, config.segments, config.denominator);
  r.fires = partition_by_fire(instances, fires);
  r.urls = url_rank(mentions, sa_by_id, schema.ids(schema::Family::SA), health_domains);
  return r;
}

inline std::string upset_csv(const IntersectionTable& t) {
  std::string out = "labels,count\n";
  for (const auto& x : t.exclusive) out += join_labels(x.labels) + "," + std::to_string(x.count) + "\n";
  return out;
}

inline std::string timeseries_csv(const TimeSeries& ts) {
  std::string out = "date,total,grief_pct,mh_pct\n";
  for (const auto& d : ts.days)
    out += d.date + "," + std::to_string(d.total) + "," + format_fixed(d.grief_pct, 4) + "," +
           format_fixed(d.mh_pct, 4) + "\n";
  return out;
}

inline std::string segments_csv(const SegmentSummary& s) {
  std::string out = "segment,total,grief_pct,mh_pct\n";
  for (const auto& x : s.segments)
    out += x.name + "," + std::to_string(x.total) + "," + format_fixed(x.grief_pct, 4) + "," +
           format_fixed(x.mh_pct, 4) + "\n";
  return out;
}

inline std::string fire_partition_csv(const FirePartition& p) {
  std::string out = "class,count\n";
  for (const auto& [c, n] : p.counts) out += c + "," + std::to_string(n) + "\n";
  return out;
}

inline std::string url_rank_csv(const UrlReport& r) {
  std::string out = "category,domain,count,is_health\n";
  auto rows = [&](const std::string& cat, const std::vector<DomainCount>& v) {
    for (const auto& d : v)
      out += cat + "," + d.domain + "," + std::to_string(d.count) + "," + (d.is_health ? "true" : "false") + "\n";
  };
  for (const auto& [c, v] : r.per_category) rows(c, v);
  rows("all", r.overall);
  return out;
}

inline json summary_json(const Report& r) {
  auto sizes = [](const IntersectionTable& t) {
    json j = json::object();
    for (std::size_t i = 0; i < t.categories.size(); ++i) j[t.categories[i]] = t.set_sizes[i];
    return j;
  };
  json health = json::object();
  for (const auto& [c, n] : r.urls.health_mentions_by_category) health[c] = n;
  return json{{"instances", r.instances},
              {"grief", r.grief},
              {"mental_health", r.mental_health},
              {"sa_set_sizes", sizes(r.upset_sa)},
              {"cn_set_sizes", sizes(r.upset_cn)},
              {"sa_labeled", r.upset_sa.labeled_instances},
              {"cn_labeled", r.upset_cn.labeled_instances},
              {"health_mentions_by_category", health},
              {"time_zone", r.timeseries.time_zone}};
}

inline const std::vector<std::string>& report_files() {
  static const std::vector<std::string> files = {"upset_sa.csv",       "upset_cn.csv", "timeseries.csv", "segments.csv",
                                                 "fire_partition.csv", "url_rank.csv", "summary.json"};
  return files;
}

inline void emit_report(const Report& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "upset_sa.csv", upset_csv(r.upset_sa));
  write_file_atomic(dir / "upset_cn.csv", upset_csv(r.upset_cn));
  write_file_atomic(dir / "timeseries.csv", timeseries_csv(r.timeseries));
  write_file_atomic(dir / "segments.csv", segments_csv(r.segments));
  write_file_atomic(dir / "fire_partition.csv", fire_partition_csv(r.fires));
  write_file_atomic(dir / "url_rank.csv", url_rank_csv(r.urls));
  write_file_atomic(dir / "summary.json", summary_json(r).dump(2) + "\n");
}

}  // namespace crisis::analytics
