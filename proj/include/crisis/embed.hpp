#pragma once

// Sentence-embedding matrices: the EMB1 binary format, row normalization and
// batched retrieval from an HTTP embedding service with an on-disk cache.

#include "crisis/common.hpp"
#include "crisis/ingest.hpp"

#include <httplib.h>
#undef _res  // resolv.h macro collides with Eigen parameter names
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <future>
#include <mutex>

namespace crisis::embed {

using nlohmann::json;

inline constexpr std::string_view kDefaultModel = "all-mpnet-base-v2";

struct EmbeddingMatrix {
  DenseMatrix<float> values;
  std::string model_id;
  std::vector<std::string> ids;  // row ids, empty when unknown

  std::size_t n() const { return values.rows(); }
  std::size_t d() const { return values.cols(); }
};

inline void check_finite(const DenseMatrix<float>& m) {
  for (std::size_t i = 0; i < m.data().size(); ++i)
    if (!std::isfinite(m.data()[i]))
      throw FormatError("non-finite embedding value at row " + std::to_string(i / std::max<std::size_t>(1, m.cols())));
}

// Scales each row to unit length; zero rows are left as they are.
inline void normalize_rows(DenseMatrix<float>& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double s = 0.0;
    for (float v : row) s += static_cast<double>(v) * v;
    if (s <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
}

// ---------------------------------------------------------------------------
// EMB1: "EMB1", u32 n, u32 d, u16 model-id length, model id, n*d float32,
// u64 xxhash64 of the float payload. All little-endian.

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

inline std::string serialize_embeddings(const EmbeddingMatrix& m) {
  if (m.model_id.size() > 0xFFFF) throw FormatError("model id too long");
  std::string out = "EMB1";
  detail::put_le(out, m.n(), 4);
  detail::put_le(out, m.d(), 4);
  detail::put_le(out, m.model_id.size(), 2);
  out += m.model_id;
  const std::size_t payload_start = out.size();
  for (float v : m.values.data()) detail::put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  const auto payload = std::string_view(out).substr(payload_start);
  detail::put_le(out, xxhash64(payload), 8);
  return out;
}

inline EmbeddingMatrix deserialize_embeddings(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 14 || bytes.substr(0, 4) != "EMB1") throw FormatError("not an EMB1 embedding file");
  const std::size_t n = detail::get_le(p + 4, 4);
  const std::size_t d = detail::get_le(p + 8, 4);
  const std::size_t id_len = detail::get_le(p + 12, 2);
  const std::size_t header = 14 + id_len;
  const std::size_t expected = header + n * d * 4 + 8;
  if (bytes.size() != expected)
    throw FormatError("embedding file size mismatch: expected " + std::to_string(expected) + " bytes for n=" +
                      std::to_string(n) + ", d=" + std::to_string(d) + ", found " + std::to_string(bytes.size()));
  EmbeddingMatrix m;
  m.model_id = std::string(bytes.substr(14, id_len));
  const auto payload = bytes.substr(header, n * d * 4);
  if (xxhash64(payload) != detail::get_le(p + header + n * d * 4, 8)) throw FormatError("embedding checksum mismatch");
  std::vector<float> values(n * d);
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(p + header + 4 * i, 4)));
  m.values = DenseMatrix<float>(n, d, std::move(values));
  check_finite(m.values);
  return m;
}

inline std::filesystem::path ids_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".ids";
  return p;
}

// Writes the matrix and, when row ids are present, a sidecar "<path>.ids"
// file with one id per line.
inline void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  check_finite(m.values);
  if (!m.ids.empty()) {
    if (m.ids.size() != m.n()) throw FormatError("row id count does not match matrix rows");
    std::string text;
    for (const auto& id : m.ids) text += id + "\n";
    write_file_atomic(ids_path(path), text);
  }
  write_file_atomic(path, serialize_embeddings(m));
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path, bool normalize = false) {
  auto m = deserialize_embeddings(read_file(path));
  if (std::filesystem::exists(ids_path(path))) {
    m.ids = read_word_list(ids_path(path));
    if (m.ids.size() != m.n())
      throw FormatError("id sidecar has " + std::to_string(m.ids.size()) + " rows, matrix has " +
                        std::to_string(m.n()));
  }
  if (normalize) normalize_rows(m.values);
  return m;
}

// Confirms that the matrix rows line up with the given document ids.
inline void verify_alignment(const EmbeddingMatrix& m, std::span<const std::string> doc_ids) {
  if (m.n() != doc_ids.size())
    throw FormatError("embedding rows (" + std::to_string(m.n()) + ") do not match documents (" +
                      std::to_string(doc_ids.size()) + ")");
  if (m.ids.empty()) return;
  for (std::size_t i = 0; i < doc_ids.size(); ++i)
    if (m.ids[i] != doc_ids[i]) throw FormatError("embedding row " + std::to_string(i) + " is " + m.ids[i] +
                                                  ", expected " + doc_ids[i]);
}

// ---------------------------------------------------------------------------
// Provider

struct ProviderConfig {
  std::string url;
  std::string api_key;
  std::string model = std::string(kDefaultModel);
  std::size_t batch_size = 64;
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{500};
  std::size_t max_concurrency = 4;
  std::filesystem::path cache_dir;

  static ProviderConfig from_env() {
    ProviderConfig c;
    if (const char* u = std::getenv("EMBED_API_URL")) c.url = u;
    if (const char* k = std::getenv("EMBED_API_KEY")) c.api_key = k;
    return c;
  }
};

// One request: texts in, one vector per text out. Throws on failure.
using BatchTransport = std::function<std::vector<std::vector<float>>(const std::vector<std::string>&,
                                                                     const std::string& model)>;

struct FetchError : Error {
  FetchError(const std::string& what, std::vector<std::size_t> batches)
      : Error(what), failed_batches(std::move(batches)) {}
  std::vector<std::size_t> failed_batches;
};

inline std::vector<std::vector<float>> parse_vectors_response(std::string_view body, std::size_t expected_rows) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(std::string("embedding response is not JSON: ") + e.what());
  }
  if (!j.contains("vectors") || !j["vectors"].is_array()) throw Error("embedding response lacks 'vectors'");
  auto vectors = j["vectors"].get<std::vector<std::vector<float>>>();
  if (vectors.size() != expected_rows)
    throw Error("embedding response has " + std::to_string(vectors.size()) + " vectors for " +
                std::to_string(expected_rows) + " texts");
  return vectors;
}

// POST {texts, model} -> {vectors}; bearer auth when an API key is set.
inline BatchTransport http_transport(const ProviderConfig& config) {
  if (config.url.empty()) throw ConfigError("EMBED_API_URL is not set");
  const auto scheme_end = config.url.find("://");
  const auto path_start = config.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = config.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config.url.substr(path_start);
  const std::string key = config.api_key;
  return [origin, path, key](const std::vector<std::string>& texts, const std::string& model) {
    httplib::Client client(origin);
    client.set_read_timeout(std::chrono::seconds(120));
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    const json body{{"texts", texts}, {"model", model}};
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw Error("embedding request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("embedding service returned HTTP " + std::to_string(res->status));
    return parse_vectors_response(res->body, texts.size());
  };
}

// Offline stand-in: signed feature hashing of lower-cased word tokens into a
// fixed number of dimensions. Deterministic and network-free.
inline BatchTransport hashing_transport(std::size_t dims = 256) {
  return [dims](const std::vector<std::string>& texts, const std::string&) {
    std::vector<std::vector<float>> out;
    ingest::TokenizerConfig tok;
    tok.min_length = 1;
    for (const auto& t : texts) {
      std::vector<float> v(dims, 0.0f);
      for (const auto& w : ingest::tokenize(t, tok)) {
        const auto h = xxhash64(w);
        v[h % dims] += (h >> 63) ? -1.0f : 1.0f;
      }
      out.push_back(std::move(v));
    }
    return out;
  };
}

inline std::uint64_t corpus_hash(std::span<const std::string> ids, std::span<const std::string> texts) {
  std::string buf;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    buf += i < ids.size() ? ids[i] : std::string();
    buf += '\x1f';
    buf += texts[i];
    buf += '\x1e';
  }
  return xxhash64(buf);
}

inline std::filesystem::path cache_path(const ProviderConfig& config, std::uint64_t hash) {
  std::string safe;
  for (char c : config.model) safe += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return config.cache_dir / (safe + "-" + hex64(hash) + ".emb");
}

// Embeds texts in batches of config.batch_size with up to max_concurrency
// requests in flight. Each batch is retried with exponential backoff; any
// batch that still fails aborts the whole call. A complete result is cached
// under (model, corpus hash) when cache_dir is set.
inline EmbeddingMatrix fetch_embeddings(std::span<const std::string> ids, std::span<const std::string> texts,
                                        const ProviderConfig& config, const BatchTransport& transport) {
  if (!ids.empty() && ids.size() != texts.size()) throw ConfigError("ids and texts differ in length");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto hash = corpus_hash(ids, texts);
  if (!config.cache_dir.empty()) {
    const auto cached = cache_path(config, hash);
    if (std::filesystem::exists(cached)) {
      try {
        auto m = load_embeddings(cached);
        if (m.n() == texts.size() && m.model_id == config.model) {
          spdlog::info("embeddings served from cache {}", cached.string());
          return m;
        }
      } catch (const Error& e) {
        spdlog::warn("ignoring unreadable embedding cache {}: {}", cached.string(), e.what());
      }
    }
  }

  const std::size_t batches = (texts.size() + config.batch_size - 1) / config.batch_size;
  std::vector<std::vector<std::vector<float>>> results(batches);
  std::vector<std::string> errors(batches);
  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * config.batch_size, end = std::min(texts.size(), begin + config.batch_size);
    const std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                         texts.begin() + static_cast<std::ptrdiff_t>(end));
    auto delay = config.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      try {
        auto vecs = transport(chunk, config.model);
        if (vecs.size() != chunk.size()) throw Error("provider returned wrong number of vectors");
        results[b] = std::move(vecs);
        return;
      } catch (const std::exception& e) {
        if (attempt >= config.max_retries) {
          errors[b] = e.what();
          return;
        }
        spdlog::warn("embedding batch {} attempt {} failed: {}", b, attempt + 1, e.what());
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, config.max_concurrency);
  for (std::size_t start = 0; start < batches; start += workers) {
    std::vector<std::future<void>> inflight;
    for (std::size_t b = start; b < std::min(batches, start + workers); ++b)
      inflight.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run_batch, b));
    for (auto& f : inflight) f.get();
  }

  std::vector<std::size_t> failed;
  std::string first_error;
  for (std::size_t b = 0; b < batches; ++b)
    if (!errors[b].empty()) {
      if (failed.empty()) first_error = errors[b];
      failed.push_back(b);
    }
  if (!failed.empty())
    throw FetchError("embedding fetch failed for " + std::to_string(failed.size()) + " batch(es): " + first_error,
                     failed);

  const std::size_t d = texts.empty() ? 0 : results[0][0].size();
  std::vector<float> values;
  values.reserve(texts.size() * d);
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t r = 0; r < results[b].size(); ++r) {
      if (results[b][r].size() != d)
        throw FetchError("batch " + std::to_string(b) + " returned dimension " + std::to_string(results[b][r].size()) +
                             ", expected " + std::to_string(d),
                         {b});
      values.insert(values.end(), results[b][r].begin(), results[b][r].end());
    }
  EmbeddingMatrix m;
  m.values = DenseMatrix<float>(texts.size(), d, std::move(values));
  m.model_id = config.model;
  m.ids.assign(ids.begin(), ids.end());
  check_finite(m.values);
  if (!config.cache_dir.empty()) write_embeddings(cache_path(config, hash), m);
  return m;
}

inline EmbeddingMatrix fetch_embeddings(std::span<const ingest::CleanDoc> docs, const ProviderConfig& config,
                                        const BatchTransport& transport) {
  std::vector<std::string> ids, texts;
  for (const auto& d : docs) {
    ids.push_back(d.id);
    texts.push_back(d.text);
  }
  return fetch_embeddings(ids, texts, config, transport);
}

}  // namespace crisis::embed
