#pragma once

// Shared plumbing: error types, hashing, deterministic random streams,
// a small dense matrix, and crash-safe file writes.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace crisis {

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line_no = 0)
      : Error(line_no ? "line " + std::to_string(line_no) + ": " + what : what), line(line_no) {}
  std::size_t line;
};
struct FormatError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct StaleInputError : Error {
  StaleInputError(const std::string& what, std::string stage_name)
      : Error(what), stage(std::move(stage_name)) {}
  std::string stage;
};

// ---------------------------------------------------------------------------
// xxHash64 (reference algorithm, seed 0 by default)

namespace detail {
constexpr std::uint64_t kXxP1 = 0x9E3779B185EBCA87ULL;
constexpr std::uint64_t kXxP2 = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kXxP3 = 0x165667B19E3779F9ULL;
constexpr std::uint64_t kXxP4 = 0x85EBCA77C2B2AE63ULL;
constexpr std::uint64_t kXxP5 = 0x27D4EB2F165667C5ULL;

inline std::uint64_t read_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint64_t xx_round(std::uint64_t acc, std::uint64_t input) {
  acc += input * kXxP2;
  acc = std::rotl(acc, 31);
  return acc * kXxP1;
}
inline std::uint64_t xx_merge(std::uint64_t acc, std::uint64_t val) {
  acc ^= xx_round(0, val);
  return acc * kXxP1 + kXxP4;
}
}  // namespace detail

inline std::uint64_t xxhash64(std::span<const unsigned char> data, std::uint64_t seed = 0) {
  using namespace detail;
  const unsigned char* p = data.data();
  const unsigned char* end = p + data.size();
  std::uint64_t h;
  if (data.size() >= 32) {
    std::uint64_t v1 = seed + kXxP1 + kXxP2, v2 = seed + kXxP2, v3 = seed, v4 = seed - kXxP1;
    const unsigned char* limit = end - 32;
    do {
      v1 = xx_round(v1, read_le64(p));
      v2 = xx_round(v2, read_le64(p + 8));
      v3 = xx_round(v3, read_le64(p + 16));
      v4 = xx_round(v4, read_le64(p + 24));
      p += 32;
    } while (p <= limit);
    h = std::rotl(v1, 1) + std::rotl(v2, 7) + std::rotl(v3, 12) + std::rotl(v4, 18);
    h = xx_merge(h, v1);
    h = xx_merge(h, v2);
    h = xx_merge(h, v3);
    h = xx_merge(h, v4);
  } else {
    h = seed + kXxP5;
  }
  h += static_cast<std::uint64_t>(data.size());
  while (p + 8 <= end) {
    h ^= xx_round(0, read_le64(p));
    h = std::rotl(h, 27) * kXxP1 + kXxP4;
    p += 8;
  }
  if (p + 4 <= end) {
    h ^= std::uint64_t(read_le32(p)) * kXxP1;
    h = std::rotl(h, 23) * kXxP2 + kXxP3;
    p += 4;
  }
  while (p < end) {
    h ^= std::uint64_t(*p) * kXxP5;
    h = std::rotl(h, 11) * kXxP1;
    ++p;
  }
  h ^= h >> 33;
  h *= kXxP2;
  h ^= h >> 29;
  h *= kXxP3;
  h ^= h >> 32;
  return h;
}

inline std::uint64_t xxhash64(std::string_view s, std::uint64_t seed = 0) {
  return xxhash64(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), seed);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic random streams.
//
// Every randomized algorithm derives its generator from (seed, key...), so a
// stream belongs to a logical entity (a document, a point, an edge) rather
// than to a position in a loop.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename... Keys>
std::uint64_t stream_key(std::uint64_t seed, Keys... keys) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(keys))), ...);
  return h;
}

using Rng = std::mt19937_64;

template <typename... Keys>
Rng make_stream(std::uint64_t seed, Keys... keys) {
  return Rng(stream_key(seed, keys...));
}

// Uniform double in [0, 1) with 53 bits; fixed formula so results do not
// depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform integer in [0, n) by rejection (unbiased, implementation independent).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

// ---------------------------------------------------------------------------
// Row-major dense matrix.

template <typename T>
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("DenseMatrix: size mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename A, typename B>
double euclidean(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

// Splits [0, n) into contiguous chunks across worker threads. fn(begin, end)
// must only write to disjoint state.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                         std::size_t max_threads = 0) {
  std::size_t threads = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, n / 64));
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

// ---------------------------------------------------------------------------
// Files.

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Write-temp-then-rename so readers never observe a truncated file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

inline std::uint64_t file_hash(const std::filesystem::path& path) { return xxhash64(read_file(path)); }

// Lines of a text data file, skipping blanks and '#' comments.
inline std::vector<std::string> read_word_list(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line.substr(b));
  }
  return out;
}

// Fixed-precision formatting for deterministic text artifacts.
inline std::string format_fixed(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace crisis
