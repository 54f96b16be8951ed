#pragma once

// Corpus loading and preprocessing: markup stripping, URL extraction, emoji
// conversion, the minimum-length retention rule, tokenization and vocabulary.

#include "crisis/common.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace crisis::ingest {

using nlohmann::json;

enum class RecordKind { post, comment };

inline std::string to_string(RecordKind k) { return k == RecordKind::post ? "post" : "comment"; }

inline RecordKind parse_kind(std::string_view s) {
  if (s == "post") return RecordKind::post;
  if (s == "comment") return RecordKind::comment;
  throw ParseError("unknown record kind '" + std::string(s) + "'");
}

struct RawRecord {
  std::string id;
  RecordKind kind = RecordKind::comment;
  std::optional<std::string> parent_id;
  std::optional<std::string> link_id;
  std::string subreddit;
  std::string author_hash;
  std::int64_t created_utc = 0;
  std::optional<std::string> title;
  std::string body;
  std::int64_t score = 0;
  bool deleted = false;
};

struct UrlMention {
  std::string url;  // normalized
  std::string domain;
  std::string source_id;

  friend bool operator==(const UrlMention&, const UrlMention&) = default;
};

struct CleanDoc {
  std::string id;
  RecordKind kind = RecordKind::comment;
  std::string text;
  std::vector<std::string> tokens;
  std::size_t token_count = 0;
  std::vector<UrlMention> urls;
  std::string subreddit;
  std::int64_t created_utc = 0;
  std::optional<std::string> link_id;

  friend bool operator==(const CleanDoc&, const CleanDoc&) = default;
};

// Reddit thing ids carry a type prefix ("t3_abc" for posts); strip it so
// comment link_ids resolve against bare post ids.
inline std::string strip_thing_prefix(std::string_view id) {
  if (id.size() > 3 && id[0] == 't' && id[1] >= '1' && id[1] <= '6' && id[2] == '_')
    id.remove_prefix(3);
  return std::string(id);
}

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(json& j, const UrlMention& m) {
  j = json{{"url", m.url}, {"domain", m.domain}, {"source_id", m.source_id}};
}
inline void from_json(const json& j, UrlMention& m) {
  j.at("url").get_to(m.url);
  j.at("domain").get_to(m.domain);
  m.source_id = j.value("source_id", "");
}

inline void to_json(json& j, const CleanDoc& d) {
  j = json{{"id", d.id},
           {"kind", to_string(d.kind)},
           {"text", d.text},
           {"tokens", d.tokens},
           {"token_count", d.token_count},
           {"urls", d.urls},
           {"subreddit", d.subreddit},
           {"created_utc", d.created_utc},
           {"link_id", d.link_id ? json(*d.link_id) : json(nullptr)}};
}
inline void from_json(const json& j, CleanDoc& d) {
  j.at("id").get_to(d.id);
  d.kind = parse_kind(j.at("kind").get<std::string>());
  j.at("text").get_to(d.text);
  j.at("tokens").get_to(d.tokens);
  d.token_count = j.value("token_count", d.tokens.size());
  d.urls = j.value("urls", std::vector<UrlMention>{});
  d.subreddit = j.value("subreddit", "");
  d.created_utc = j.value("created_utc", std::int64_t{0});
  if (j.contains("link_id") && !j["link_id"].is_null()) d.link_id = j["link_id"].get<std::string>();
}

namespace detail {
inline std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}
}  // namespace detail

inline RawRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  RawRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = parse_kind(j.at("kind").get<std::string>());
  r.parent_id = detail::opt_string(j, "parent_id");
  r.link_id = detail::opt_string(j, "link_id");
  r.subreddit = j.value("subreddit", "");
  r.author_hash = j.value("author_hash", "");
  r.created_utc = j.at("created_utc").get<std::int64_t>();
  r.title = detail::opt_string(j, "title");
  r.body = j.value("body", "");
  r.score = j.value("score", std::int64_t{0});
  r.deleted = j.value("deleted", false);
  if (r.id.empty()) throw ParseError("empty id");
  if (r.kind == RecordKind::comment && (!r.link_id || r.link_id->empty()))
    throw ParseError("comment " + r.id + " has no link_id");
  if (r.kind == RecordKind::post && r.parent_id)
    throw ParseError("post " + r.id + " has a parent_id");
  return r;
}

inline json record_to_json(const RawRecord& r) {
  json j{{"id", r.id},
         {"kind", to_string(r.kind)},
         {"subreddit", r.subreddit},
         {"author_hash", r.author_hash},
         {"created_utc", r.created_utc},
         {"body", r.body},
         {"score", r.score},
         {"deleted", r.deleted}};
  if (r.parent_id) j["parent_id"] = *r.parent_id;
  if (r.link_id) j["link_id"] = *r.link_id;
  if (r.title) j["title"] = *r.title;
  return j;
}

// ---------------------------------------------------------------------------
// load_corpus

struct LoadOptions {
  bool lenient = false;  // skip malformed lines instead of failing
  std::optional<std::pair<std::int64_t, std::int64_t>> window;  // [begin, end) epoch seconds
};

struct CorpusLoad {
  std::vector<RawRecord> records;
  std::size_t posts = 0;
  std::size_t comments = 0;
  std::size_t skipped = 0;
  std::size_t outside_window = 0;
};

inline CorpusLoad parse_corpus(std::istream& in, const LoadOptions& opts = {}) {
  CorpusLoad out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      RawRecord r = record_from_json(json::parse(line));
      if (!seen.insert(r.id).second) throw ParseError("duplicate id " + r.id);
      if (opts.window && (r.created_utc < opts.window->first || r.created_utc >= opts.window->second)) {
        ++out.outside_window;
        continue;
      }
      (r.kind == RecordKind::post ? out.posts : out.comments) += 1;
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      if (!opts.lenient) throw ParseError(e.what(), line_no);
      spdlog::warn("skipping malformed record at line {}: {}", line_no, e.what());
      ++out.skipped;
    }
  }
  return out;
}

inline CorpusLoad load_corpus(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return parse_corpus(in, opts);
}

// ---------------------------------------------------------------------------
// UTF-8 helpers

namespace utf8 {

struct Decoded {
  char32_t cp;
  std::size_t len;
};

// Invalid bytes decode as themselves with length 1.
inline Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]) & 0x3Fu; };
  if ((b0 & 0xE0) == 0xC0 && cont(1)) return {char32_t((b0 & 0x1Fu) << 6 | bits(1)), 2};
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2))
    return {char32_t((b0 & 0x0Fu) << 12 | bits(1) << 6 | bits(2)), 3};
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3))
    return {char32_t((b0 & 0x07u) << 18 | bits(1) << 12 | bits(2) << 6 | bits(3)), 4};
  return {b0, 1};
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

}  // namespace utf8

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    // U+00A0 no-break space
    if (c == '\xC2' && i + 1 < s.size() && s[i + 1] == '\xA0') {
      pending = true;
      ++i;
      continue;
    }
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// strip_markup

namespace detail {

inline std::string decode_entities(std::string_view s) {
  static const std::pair<std::string_view, std::string_view> named[] = {
      {"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&apos;", "'"}, {"&nbsp;", " "}};
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '&') {
      bool done = false;
      for (auto [from, to] : named) {
        if (s.substr(i, from.size()) == from) {
          out += to;
          i += from.size();
          done = true;
          break;
        }
      }
      if (done) continue;
      if (i + 2 < s.size() && s[i + 1] == '#') {
        std::size_t j = i + 2;
        const bool hex = j < s.size() && (s[j] == 'x' || s[j] == 'X');
        if (hex) ++j;
        const std::size_t start = j;
        while (j < s.size() && (hex ? std::isxdigit(static_cast<unsigned char>(s[j]))
                                    : std::isdigit(static_cast<unsigned char>(s[j]))))
          ++j;
        if (j > start && j < s.size() && s[j] == ';' && j - start <= 7) {
          const auto cp = static_cast<char32_t>(std::stoul(std::string(s.substr(start, j - start)), nullptr, hex ? 16 : 10));
          if (cp > 0 && cp < 0x110000) {
            utf8::append(out, cp);
            i = j + 1;
            continue;
          }
        }
      }
    }
    out += s[i++];
  }
  return out;
}

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string remove_html_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '<' && i + 1 < s.size() &&
        (std::isalpha(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '/' || s[i + 1] == '!')) {
      const std::size_t close = s.find('>', i + 1);
      const std::size_t reopen = s.find('<', i + 1);
      if (close != std::string_view::npos && (reopen == std::string_view::npos || reopen > close)) {
        out += ' ';
        i = close + 1;
        continue;
      }
    }
    out += s[i++];
  }
  return out;
}

// [anchor](target) and ![alt](src) -> anchor / alt.
inline std::string reduce_markdown_links(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const bool image = s[i] == '!' && i + 1 < s.size() && s[i + 1] == '[';
    const std::size_t open = image ? i + 1 : i;
    if (s[open] == '[') {
      const std::size_t close = s.find(']', open + 1);
      if (close != std::string_view::npos && close + 1 < s.size() && s[close + 1] == '(' &&
          s.substr(open + 1, close - open - 1).find('[') == std::string_view::npos) {
        int depth = 0;
        std::size_t j = close + 1;
        for (; j < s.size(); ++j) {
          if (s[j] == '(') ++depth;
          else if (s[j] == ')' && --depth == 0) break;
          else if (s[j] == '\n') break;
        }
        if (j < s.size() && s[j] == ')') {
          out += s.substr(open + 1, close - open - 1);
          i = j + 1;
          continue;
        }
      }
    }
    out += s[i++];
  }
  return out;
}

inline std::string strip_line_markers(std::string_view line) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  };
  skip_ws();
  // blockquotes, possibly nested
  while (i < line.size() && line[i] == '>') {
    ++i;
    skip_ws();
  }
  // headings
  if (i < line.size() && line[i] == '#') {
    while (i < line.size() && line[i] == '#') ++i;
    skip_ws();
  }
  // bullets
  if (i + 1 < line.size() && (line[i] == '-' || line[i] == '+') && (line[i + 1] == ' ' || line[i + 1] == '\t')) {
    i += 2;
  }
  // horizontal rules
  std::string_view rest = line.substr(i);
  if (rest.size() >= 3 && rest.find_first_not_of("-*_ \t") == std::string_view::npos) return {};
  return std::string(rest);
}

inline std::string strip_inline_markers(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '*' || c == '`' || c == '^' || c == '\\' || c == '|') continue;
    if (c == '~' && i + 1 < s.size() && s[i + 1] == '~') {
      ++i;
      continue;
    }
    if (c == '_') {
      const bool inner = i > 0 && is_alnum(s[i - 1]) && i + 1 < s.size() && is_alnum(s[i + 1]);
      if (!inner) continue;
    }
    out += c;
  }
  return out;
}

}  // namespace detail

inline std::string strip_markup(std::string_view text) {
  std::string s = detail::decode_entities(text);
  s = detail::remove_html_tags(s);
  s = detail::reduce_markdown_links(s);
  std::string lines;
  lines.reserve(s.size());
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    if (nl == std::string::npos) nl = s.size();
    lines += detail::strip_line_markers(std::string_view(s).substr(start, nl - start));
    lines += '\n';
    start = nl + 1;
  }
  return collapse_whitespace(detail::strip_inline_markers(lines));
}

// ---------------------------------------------------------------------------
// extract_urls

struct ParsedUrl {
  std::string scheme;
  std::string host;
  std::string rest;  // path + query (fragment removed)
};

inline std::optional<ParsedUrl> parse_absolute_url(std::string_view url) {
  const std::size_t sep = url.find("://");
  if (sep == std::string_view::npos || sep == 0) return std::nullopt;
  ParsedUrl p;
  for (char c : url.substr(0, sep)) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '+' && c != '-' && c != '.') return std::nullopt;
    p.scheme += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::string_view after = url.substr(sep + 3);
  const std::size_t host_end = after.find_first_of("/?#");
  std::string_view authority = after.substr(0, host_end);
  if (const auto at = authority.rfind('@'); at != std::string_view::npos) authority.remove_prefix(at + 1);
  if (authority.empty()) return std::nullopt;
  for (char c : authority) p.host += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (p.host.find('.') == std::string::npos && p.host.rfind("localhost", 0) != 0) return std::nullopt;
  if (host_end != std::string_view::npos) {
    std::string_view rest = after.substr(host_end);
    if (const auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    p.rest = std::string(rest);
  }
  return p;
}

// Scheme and host lowercased, fragment stripped, query kept.
inline std::string normalize_url(std::string_view url) {
  auto p = parse_absolute_url(url);
  if (!p) return std::string(url);
  return p->scheme + "://" + p->host + p->rest;
}

// Host without port and without common service prefixes (www., m., old., ...).
inline std::string url_domain(std::string_view url) {
  auto p = parse_absolute_url(url);
  if (!p) return {};
  std::string host = p->host;
  if (const auto colon = host.find(':'); colon != std::string::npos) host.resize(colon);
  static const std::string_view prefixes[] = {"www.", "m.", "old.", "new.", "np.", "amp.", "mobile."};
  for (bool again = true; again;) {
    again = false;
    for (auto pre : prefixes) {
      if (host.size() > pre.size() + 3 && host.compare(0, pre.size(), pre) == 0 &&
          host.find('.', pre.size()) != std::string::npos) {
        host.erase(0, pre.size());
        again = true;
      }
    }
  }
  return host;
}

struct UrlExtraction {
  std::string text;
  std::vector<UrlMention> mentions;
};

namespace detail {

inline bool starts_with_ci(std::string_view s, std::size_t i, std::string_view prefix) {
  if (i + prefix.size() > s.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k)
    if (std::tolower(static_cast<unsigned char>(s[i + k])) != prefix[k]) return false;
  return true;
}

inline bool url_boundary(char c) {
  return is_space(c) || c == '<' || c == '>' || c == '"' || c == '[' || c == ']' || c == '{' || c == '}';
}

// End of a URL starting at i: stops at boundaries, keeps balanced parentheses,
// trims trailing punctuation.
inline std::size_t scan_url_end(std::string_view s, std::size_t i) {
  std::size_t j = i;
  int depth = 0;
  for (; j < s.size(); ++j) {
    const char c = s[j];
    if (url_boundary(c)) break;
    if (c == '(') ++depth;
    if (c == ')') {
      if (depth == 0) break;
      --depth;
    }
  }
  while (j > i && std::string_view(".,;:!?*'_~").find(s[j - 1]) != std::string_view::npos) --j;
  return j;
}

inline std::string clean_url_text(std::string_view raw) {
  std::string out;
  for (char c : raw)
    if (c != '\\') out += c;
  return out;
}

}  // namespace detail

inline UrlExtraction extract_urls(std::string_view text) {
  UrlExtraction out;
  std::string buf;
  buf.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const bool at_url = detail::starts_with_ci(text, i, "http://") || detail::starts_with_ci(text, i, "https://");
    if (!at_url || (i > 0 && detail::is_alnum(text[i - 1]))) {
      buf += text[i++];
      continue;
    }
    const std::size_t end = detail::scan_url_end(text, i);
    const std::string raw = detail::clean_url_text(text.substr(i, end - i));
    auto parsed = parse_absolute_url(raw);
    if (!parsed) {
      buf += text[i++];
      continue;
    }
    UrlMention m;
    m.url = normalize_url(raw);
    m.domain = url_domain(raw);
    out.mentions.push_back(std::move(m));

    // Markdown target "[anchor](url)": keep only the anchor.
    if (buf.size() >= 2 && buf.compare(buf.size() - 2, 2, "](") == 0) {
      const std::size_t open = buf.rfind('[', buf.size() - 2);
      std::size_t close_paren = end;
      while (close_paren < text.size() && text[close_paren] != ')' && text[close_paren] != '\n') ++close_paren;
      if (open != std::string::npos && close_paren < text.size() && text[close_paren] == ')') {
        std::string anchor = buf.substr(open + 1, buf.size() - 2 - (open + 1));
        buf.resize(open);
        // An anchor that is itself the URL carries no extra words.
        if (anchor.find("://") == std::string::npos) buf += anchor;
        buf += ' ';
        i = close_paren + 1;
        continue;
      }
    }
    // Autolink "<url>"
    if (!buf.empty() && buf.back() == '<' && end < text.size() && text[end] == '>') {
      buf.pop_back();
      i = end + 1;
      buf += ' ';
      continue;
    }
    buf += ' ';
    i = end;
  }
  out.text = collapse_whitespace(buf);
  return out;
}

// ---------------------------------------------------------------------------
// Emoji

class EmojiTable {
 public:
  EmojiTable() = default;

  void add(std::u32string codepoints, std::string name) {
    if (codepoints.empty() || name.empty()) throw FormatError("emoji table: empty entry");
    max_len_ = std::max(max_len_, codepoints.size());
    entries_[std::move(codepoints)] = std::move(name);
  }

  std::optional<std::string_view> lookup(std::u32string_view seq) const {
    auto it = entries_.find(std::u32string(seq));
    if (it == entries_.end()) return std::nullopt;
    return std::string_view(it->second);
  }

  std::size_t max_length() const { return max_len_; }
  std::size_t size() const { return entries_.size(); }

  // TSV: "codepoints<TAB>shortname", codepoints as space-separated hex.
  static EmojiTable parse(std::string_view tsv) {
    EmojiTable t;
    std::istringstream in{std::string(tsv)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("emoji table: missing tab", line_no);
      std::u32string cps;
      std::istringstream hex(line.substr(0, tab));
      std::string tok;
      while (hex >> tok) {
        try {
          cps += static_cast<char32_t>(std::stoul(tok, nullptr, 16));
        } catch (const std::exception&) {
          throw ParseError("emoji table: bad codepoint '" + tok + "'", line_no);
        }
      }
      t.add(std::move(cps), line.substr(tab + 1));
    }
    return t;
  }

  static EmojiTable load(const std::filesystem::path& path) { return parse(read_file(path)); }

 private:
  std::map<std::u32string, std::string> entries_;
  std::size_t max_len_ = 0;
};

inline bool is_emoji_codepoint(char32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x27BF) || (cp >= 0x2B00 && cp <= 0x2BFF);
}

// Modifiers that attach to a preceding emoji: variation selectors, skin tones,
// keycap, tags.
inline bool is_emoji_modifier(char32_t cp) {
  return cp == 0xFE0F || cp == 0xFE0E || (cp >= 0x1F3FB && cp <= 0x1F3FF) || cp == 0x20E3 ||
         (cp >= 0xE0020 && cp <= 0xE007F);
}

inline constexpr std::string_view kUnknownEmoji = "emoji";

inline std::string convert_emojis(std::string_view text, const EmojiTable& table) {
  std::u32string cps;
  std::vector<std::size_t> offsets;  // byte offset of each codepoint
  for (std::size_t i = 0; i < text.size();) {
    auto d = utf8::decode(text, i);
    cps += d.cp;
    offsets.push_back(i);
    i += d.len;
  }
  offsets.push_back(text.size());

  std::string out;
  out.reserve(text.size());
  bool changed = false;
  for (std::size_t k = 0; k < cps.size();) {
    const char32_t cp = cps[k];
    const bool emoji_start = is_emoji_codepoint(cp);
    if (!emoji_start) {
      if (is_emoji_modifier(cp) || cp == 0x200D) {  // stray joiner/selector
        ++k;
        changed = true;
        continue;
      }
      out.append(text.substr(offsets[k], offsets[k + 1] - offsets[k]));
      ++k;
      continue;
    }
    changed = true;
    std::size_t matched = 0;
    std::string_view name;
    const std::size_t max_len = std::min(table.max_length(), cps.size() - k);
    for (std::size_t len = max_len; len >= 1; --len) {
      if (auto hit = table.lookup(std::u32string_view(cps).substr(k, len))) {
        matched = len;
        name = *hit;
        break;
      }
    }
    std::size_t next = k + std::max<std::size_t>(matched, 1);
    // Absorb trailing modifiers and zero-width-joined continuations.
    while (next < cps.size()) {
      if (is_emoji_modifier(cps[next])) {
        ++next;
      } else if (cps[next] == 0x200D && next + 1 < cps.size() && is_emoji_codepoint(cps[next + 1])) {
        if (matched) break;  // a known base followed by ZWJ starts a new emoji
        next += 2;
      } else {
        break;
      }
    }
    out += ' ';
    out += matched ? name : kUnknownEmoji;
    out += ' ';
    k = next;
  }
  return changed ? collapse_whitespace(out) : out;
}

// ---------------------------------------------------------------------------
// Tokenization

struct TokenizerConfig {
  std::unordered_set<std::string> stopwords;
  std::size_t min_length = 2;

  static TokenizerConfig with_stopword_file(const std::filesystem::path& path) {
    TokenizerConfig c;
    for (auto& w : read_word_list(path)) c.stopwords.insert(w);
    return c;
  }
};

namespace detail {
// Latin letters beyond ASCII are kept inside tokens.
inline bool is_latin_letter(char32_t cp) { return cp >= 0xC0 && cp <= 0x24F && cp != 0xD7 && cp != 0xF7; }
inline char32_t fold_case(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}
}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& config) {
  std::vector<std::string> tokens;
  std::string cur;
  std::size_t cur_len = 0;
  auto flush = [&] {
    if (cur_len >= config.min_length && !config.stopwords.contains(cur)) tokens.push_back(cur);
    cur.clear();
    cur_len = 0;
  };
  for (std::size_t i = 0; i < text.size();) {
    auto d = utf8::decode(text, i);
    i += d.len;
    const char32_t cp = d.cp;
    const bool ascii_alnum = cp < 0x80 && std::isalnum(static_cast<int>(cp));
    if (ascii_alnum || detail::is_latin_letter(cp)) {
      utf8::append(cur, detail::fold_case(cp));
      ++cur_len;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

inline std::size_t whitespace_word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// preprocess

enum class RejectReason { too_short, deleted, empty };

inline std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::too_short: return "too_short";
    case RejectReason::deleted: return "deleted";
    case RejectReason::empty: return "empty";
  }
  return "unknown";
}

struct Preprocessed {
  std::optional<CleanDoc> doc;
  std::optional<RejectReason> rejected;
  std::vector<UrlMention> urls;  // captured even for rejected records
};

inline bool is_deletion_placeholder(std::string_view body) {
  std::string t = collapse_whitespace(body);
  return t == "[deleted]" || t == "[removed]";
}

// Cleaning chain. URLs are extracted from the raw text first so that markdown
// link targets are still present; markup stripping would otherwise reduce
// "[a](url)" to "a" and lose the URL.
inline std::pair<std::string, std::vector<UrlMention>> clean_text(std::string_view raw, const EmojiTable& table) {
  auto extracted = extract_urls(raw);
  std::string text = strip_markup(extracted.text);
  text = convert_emojis(text, table);
  return {std::move(text), std::move(extracted.mentions)};
}

inline Preprocessed preprocess(const RawRecord& record, const EmojiTable& table, const TokenizerConfig& tokenizer,
                               std::size_t min_words = 10) {
  Preprocessed out;
  std::string raw = record.body;
  if (record.kind == RecordKind::post && record.title && !record.title->empty())
    raw = *record.title + (raw.empty() ? "" : "\n\n" + raw);

  auto [text, urls] = clean_text(raw, table);
  for (auto& m : urls) m.source_id = record.id;
  out.urls = urls;

  if (record.deleted || is_deletion_placeholder(record.body)) {
    out.rejected = RejectReason::deleted;
    return out;
  }
  const std::size_t words = whitespace_word_count(text);
  if (words == 0) {
    out.rejected = RejectReason::empty;
    return out;
  }
  if (words < min_words) {
    out.rejected = RejectReason::too_short;
    return out;
  }
  CleanDoc doc;
  doc.id = record.id;
  doc.kind = record.kind;
  doc.tokens = tokenize(text, tokenizer);
  doc.token_count = doc.tokens.size();
  doc.text = std::move(text);
  doc.urls = std::move(urls);
  doc.subreddit = record.subreddit;
  doc.created_utc = record.created_utc;
  if (record.link_id) doc.link_id = strip_thing_prefix(*record.link_id);
  out.doc = std::move(doc);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level preprocessing and stats

struct IngestStats {
  std::size_t posts_in = 0, posts_kept = 0, comments_in = 0, comments_kept = 0;
  std::size_t deleted = 0;
  std::size_t unique_urls = 0;
  std::map<std::string, std::size_t> post_rejections;
  std::map<std::string, std::size_t> comment_rejections;
};

inline json to_json_value(const IngestStats& s) {
  return json{{"posts_in", s.posts_in},
              {"posts_kept", s.posts_kept},
              {"comments_in", s.comments_in},
              {"comments_kept", s.comments_kept},
              {"deleted", s.deleted},
              {"unique_urls", s.unique_urls},
              {"rejections", {{"post", s.post_rejections}, {"comment", s.comment_rejections}}}};
}

struct IngestResult {
  std::vector<CleanDoc> docs;           // retained, input order
  std::vector<UrlMention> all_mentions;  // every mention, retained or not, input order
  IngestStats stats;
};

// Record-level map over the corpus. Output order equals input order
// regardless of how the work is split across threads.
inline IngestResult preprocess_corpus(std::span<const RawRecord> records, const EmojiTable& table,
                                      const TokenizerConfig& tokenizer, std::size_t min_words = 10) {
  std::vector<Preprocessed> results(records.size());
  parallel_for(records.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) results[i] = preprocess(records[i], table, tokenizer, min_words);
  });
  IngestResult out;
  std::set<std::string> unique;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool post = records[i].kind == RecordKind::post;
    (post ? out.stats.posts_in : out.stats.comments_in) += 1;
    for (auto& m : results[i].urls) {
      unique.insert(m.url);
      out.all_mentions.push_back(m);
    }
    if (results[i].doc) {
      (post ? out.stats.posts_kept : out.stats.comments_kept) += 1;
      out.docs.push_back(std::move(*results[i].doc));
    } else {
      const auto reason = *results[i].rejected;
      if (reason == RejectReason::deleted) ++out.stats.deleted;
      (post ? out.stats.post_rejections : out.stats.comment_rejections)[to_string(reason)] += 1;
    }
  }
  out.stats.unique_urls = unique.size();
  return out;
}

inline std::string to_jsonl(std::span<const CleanDoc> docs) {
  std::string out;
  for (const auto& d : docs) {
    out += json(d).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CleanDoc> read_clean_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<CleanDoc> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      docs.push_back(json::parse(line).get<CleanDoc>());
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> terms, std::vector<std::size_t> df) : terms_(std::move(terms)), df_(std::move(df)) {
    for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], static_cast<int>(i));
  }

  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::string& term(std::size_t i) const { return terms_.at(i); }
  std::size_t df(std::size_t i) const { return df_.at(i); }
  const std::vector<std::size_t>& document_frequencies() const { return df_; }

  std::optional<int> index(std::string_view term) const {
    auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<int> encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens)
      if (auto i = index(t)) ids.push_back(*i);
    return ids;
  }

  std::uint64_t hash() const {
    std::string joined;
    for (const auto& t : terms_) {
      joined += t;
      joined += '\n';
    }
    return xxhash64(joined);
  }

 private:
  std::vector<std::string> terms_;
  std::vector<std::size_t> df_;
  std::unordered_map<std::string, int> index_;
};

inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> token_lists, std::size_t min_df,
                                   double max_df_ratio) {
  if (token_lists.empty()) throw ConfigError("build_vocabulary: no documents");
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& toks : token_lists) {
    std::unordered_set<std::string_view> seen(toks.begin(), toks.end());
    for (auto t : seen) ++df[std::string(t)];
  }
  const double n = static_cast<double>(token_lists.size());
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [t, f] : df)
    if (f >= min_df && static_cast<double>(f) / n <= max_df_ratio) kept.emplace_back(t, f);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (kept.empty()) throw ConfigError("build_vocabulary: no term satisfies min_df/max_df_ratio");
  std::vector<std::string> terms;
  std::vector<std::size_t> dfs;
  for (auto& [t, f] : kept) {
    terms.push_back(std::move(t));
    dfs.push_back(f);
  }
  return Vocabulary(std::move(terms), std::move(dfs));
}

inline Vocabulary build_vocabulary(std::span<const CleanDoc> docs, std::size_t min_df, double max_df_ratio) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(docs.size());
  for (const auto& d : docs) lists.push_back(d.tokens);
  return build_vocabulary(std::span<const std::vector<std::string>>(lists), min_df, max_df_ratio);
}

}  // namespace crisis::ingest
