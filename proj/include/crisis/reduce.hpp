#pragma once

// Neighbour-graph manifold embedding: fuzzy k-NN weights, symmetrization,
// and stochastic layout optimization with negative sampling.

#include "crisis/common.hpp"
#include "crisis/knn.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/NonLinearOptimization>

#include <map>
#include <numeric>

namespace crisis::reduce {

struct ReducerConfig {
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t n_components = 5;
  int epochs = 0;  // 0 selects 500 for n <= 10000, else 200
  std::uint64_t seed = 42;
  double spread = 1.0;
  double learning_rate = 1.0;
  int negative_sample_rate = 5;
  double repulsion_strength = 1.0;

  void validate(std::size_t n) const {
    if (n_neighbors < 2) throw ConfigError("n_neighbors must be >= 2");
    if (n_neighbors >= n)
      throw ConfigError("n_neighbors (" + std::to_string(n_neighbors) + ") must be below the number of rows (" +
                        std::to_string(n) + ")");
    if (!(min_dist >= 0.0 && min_dist < 1.0)) throw ConfigError("min_dist must lie in [0, 1)");
    if (n_components < 1) throw ConfigError("n_components must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Output-space kernel 1 / (1 + a d^(2b)) fitted to the min_dist target curve.

struct CurveParams {
  double a = 0.0;
  double b = 0.0;
};

namespace detail {

struct CurveResidual {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  Eigen::VectorXd xs, ys;
  int inputs() const { return 2; }
  int values() const { return static_cast<int>(xs.size()); }

  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    for (Eigen::Index i = 0; i < xs.size(); ++i) r[i] = 1.0 / (1.0 + p[0] * std::pow(xs[i], 2.0 * p[1])) - ys[i];
    return 0;
  }
  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& j) const {
    for (Eigen::Index i = 0; i < xs.size(); ++i) {
      const double x = xs[i];
      if (x <= 0.0) {
        j(i, 0) = j(i, 1) = 0.0;
        continue;
      }
      const double u = std::pow(x, 2.0 * p[1]);
      const double den = (1.0 + p[0] * u) * (1.0 + p[0] * u);
      j(i, 0) = -u / den;
      j(i, 1) = -p[0] * u * 2.0 * std::log(x) / den;
    }
    return 0;
  }
};

}  // namespace detail

// Least-squares fit over 300 points on [0, 3 * spread], starting from (1, 1).
inline CurveParams fit_curve(double spread, double min_dist) {
  detail::CurveResidual f;
  const int m = 300;
  f.xs.resize(m);
  f.ys.resize(m);
  for (int i = 0; i < m; ++i) {
    const double x = spread * 3.0 * i / (m - 1);
    f.xs[i] = x;
    f.ys[i] = x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
  }
  Eigen::VectorXd p(2);
  p << 1.0, 1.0;
  Eigen::LevenbergMarquardt<detail::CurveResidual> lm(f);
  lm.parameters.maxfev = 2000;
  lm.minimize(p);
  return {p[0], p[1]};
}

// ---------------------------------------------------------------------------
// Fuzzy neighbourhood graph

struct FuzzyGraph {
  // Symmetric edge list; both (i, j) and (j, i) are present.
  std::vector<std::int32_t> head, tail;
  std::vector<double> weight;
  std::vector<double> rho, sigma;
};

namespace detail {

inline std::pair<double, double> smooth_distance(std::span<const double> dists, double mean_all) {
  const double target = std::log2(static_cast<double>(dists.size()));
  double rho = 0.0;
  for (double d : dists)
    if (d > 0.0) {
      rho = d;
      break;
    }
  double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
  for (int iter = 0; iter < 64; ++iter) {
    double psum = 0.0;
    for (double d : dists) {
      const double gap = d - rho;
      psum += gap > 0.0 ? std::exp(-gap / mid) : 1.0;
    }
    if (std::abs(psum - target) < 1e-5) break;
    if (psum > target) {
      hi = mid;
      mid = (lo + hi) / 2.0;
    } else {
      lo = mid;
      mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
    }
  }
  const double mean_local = std::accumulate(dists.begin(), dists.end(), 0.0) / static_cast<double>(dists.size());
  const double floor = 1e-3 * (rho > 0.0 ? mean_local : mean_all);
  return {rho, std::max(mid, floor)};
}

}  // namespace detail

// Directed weights exp(-(d - rho_i) / sigma_i) over the k nearest neighbours
// with sum log2(k), then symmetrized as a + b - ab.
inline FuzzyGraph fuzzy_graph(const knn::KnnGraph& g) {
  const std::size_t n = g.indices.rows(), k = g.k;
  double mean_all = 0.0;
  for (double d : g.distances.data()) mean_all += d;
  mean_all /= static_cast<double>(g.distances.data().size());

  FuzzyGraph out;
  out.rho.resize(n);
  out.sigma.resize(n);
  std::vector<std::map<std::int32_t, double>> directed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [rho, sigma] = detail::smooth_distance(g.distances.row(i), mean_all);
    out.rho[i] = rho;
    out.sigma[i] = sigma;
    for (std::size_t r = 0; r < k; ++r) {
      const double gap = g.distances(i, r) - rho;
      directed[i][g.indices(i, r)] = gap <= 0.0 ? 1.0 : std::exp(-gap / sigma);
    }
  }
  std::vector<std::map<std::int32_t, double>> sym(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, w] : directed[i]) {
      const auto it = directed[j].find(static_cast<std::int32_t>(i));
      const double back = it == directed[j].end() ? 0.0 : it->second;
      const double s = w + back - w * back;
      sym[i][j] = s;
      sym[j][static_cast<std::int32_t>(i)] = s;
    }
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, w] : sym[i]) {
      out.head.push_back(static_cast<std::int32_t>(i));
      out.tail.push_back(j);
      out.weight.push_back(w);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

struct Reduction {
  DenseMatrix<double> embedding;
  bool degenerate = false;
  CurveParams curve;
  int epochs = 0;
};

inline int default_epochs(std::size_t n) { return n <= 10000 ? 500 : 200; }

namespace detail {

inline double clip(double v) { return std::clamp(v, -4.0, 4.0); }

inline bool all_rows_identical(const DenseMatrix<float>& x) {
  for (std::size_t r = 1; r < x.rows(); ++r)
    if (!std::equal(x.row(r).begin(), x.row(r).end(), x.row(0).begin())) return false;
  return true;
}

}  // namespace detail

// Per-row keys used to derive random streams; defaults to a hash of the row
// contents so that keys travel with the points under row permutation.
inline std::vector<std::uint64_t> content_keys(const DenseMatrix<float>& x) {
  std::vector<std::uint64_t> keys(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    keys[r] = xxhash64(std::span(reinterpret_cast<const unsigned char*>(row.data()), row.size() * sizeof(float)));
  }
  return keys;
}

// All randomness (initial positions, negative samples) is drawn from streams
// keyed by point keys, and edges are visited in key order, so permuting rows
// together with their keys permutes the output rows identically.
inline Reduction reduce(const DenseMatrix<float>& x, const ReducerConfig& config,
                        std::span<const std::uint64_t> point_keys = {}) {
  const std::size_t n = x.rows(), dim = config.n_components;
  config.validate(n);
  Reduction out;
  out.epochs = config.epochs > 0 ? config.epochs : default_epochs(n);
  out.curve = fit_curve(config.spread, config.min_dist);
  if (detail::all_rows_identical(x)) {
    spdlog::warn("reduce: all input rows are identical; returning a zero embedding");
    out.embedding = DenseMatrix<double>(n, dim);
    out.degenerate = true;
    return out;
  }
  std::vector<std::uint64_t> keys(point_keys.begin(), point_keys.end());
  if (keys.empty()) keys = content_keys(x);
  if (keys.size() != n) throw ConfigError("point key count does not match rows");

  const auto graph = fuzzy_graph(knn::knn_graph(x, config.n_neighbors));
  const double max_w = *std::max_element(graph.weight.begin(), graph.weight.end());
  const int n_epochs = out.epochs;

  struct Edge {
    std::int32_t head, tail;
    double epochs_per_sample;
  };
  std::vector<Edge> edges;
  for (std::size_t e = 0; e < graph.weight.size(); ++e) {
    if (graph.weight[e] < max_w / n_epochs) continue;
    edges.push_back({graph.head[e], graph.tail[e], max_w / graph.weight[e]});
  }
  std::sort(edges.begin(), edges.end(), [&](const Edge& a, const Edge& b) {
    const auto ka = std::pair(keys[a.head], keys[a.tail]), kb = std::pair(keys[b.head], keys[b.tail]);
    if (ka != kb) return ka < kb;
    return std::pair(a.head, a.tail) < std::pair(b.head, b.tail);
  });
  std::vector<std::int32_t> by_rank(n);
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::sort(by_rank.begin(), by_rank.end(), [&](std::int32_t a, std::int32_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
  });

  DenseMatrix<double> y(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_stream(config.seed, keys[i], 0x1417u);
    for (std::size_t c = 0; c < dim; ++c) y(i, c) = -10.0 + 20.0 * uniform01(rng);
  }

  const double a = out.curve.a, b = out.curve.b, gamma = config.repulsion_strength;
  const std::size_t m = edges.size();
  std::vector<double> next_sample(m), neg_per_sample(m), next_neg(m);
  for (std::size_t e = 0; e < m; ++e) {
    next_sample[e] = edges[e].epochs_per_sample;
    neg_per_sample[e] = edges[e].epochs_per_sample / config.negative_sample_rate;
    next_neg[e] = neg_per_sample[e];
  }
  auto sq_dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = y(i, c) - y(j, c);
      s += d * d;
    }
    return s;
  };

  double alpha = config.learning_rate;
  for (int epoch = 0; epoch < n_epochs; ++epoch) {
    for (std::size_t e = 0; e < m; ++e) {
      if (next_sample[e] > epoch) continue;
      const std::size_t i = static_cast<std::size_t>(edges[e].head), j = static_cast<std::size_t>(edges[e].tail);
      double d2 = sq_dist(i, j);
      if (d2 > 0.0) {
        const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
        for (std::size_t c = 0; c < dim; ++c) {
          const double g = detail::clip(coeff * (y(i, c) - y(j, c)));
          y(i, c) += g * alpha;
          y(j, c) -= g * alpha;
        }
      }
      next_sample[e] += edges[e].epochs_per_sample;

      const int n_neg = static_cast<int>((epoch - next_neg[e]) / neg_per_sample[e]);
      auto rng = make_stream(config.seed, keys[i], keys[j], static_cast<std::uint64_t>(epoch));
      for (int p = 0; p < n_neg; ++p) {
        const std::size_t k = static_cast<std::size_t>(by_rank[uniform_index(rng, n)]);
        if (k == i) continue;
        d2 = sq_dist(i, k);
        if (d2 > 0.0) {
          const double coeff = 2.0 * gamma * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
          for (std::size_t c = 0; c < dim; ++c) y(i, c) += detail::clip(coeff * (y(i, c) - y(k, c))) * alpha;
        } else {
          for (std::size_t c = 0; c < dim; ++c) y(i, c) += 4.0 * alpha;
        }
      }
      next_neg[e] += n_neg * neg_per_sample[e];
    }
    alpha = config.learning_rate * (1.0 - static_cast<double>(epoch + 1) / n_epochs);
  }
  for (double v : y.data())
    if (!std::isfinite(v)) throw Error("reduce produced a non-finite coordinate");
  out.embedding = std::move(y);
  return out;
}

}  // namespace crisis::reduce
