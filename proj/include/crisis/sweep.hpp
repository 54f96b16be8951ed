#pragma once

// Grid search over reducer and clusterer hyperparameters.

#include "crisis/hdbscan.hpp"
#include "crisis/reduce.hpp"

#include <future>
#include <map>
#include <optional>

namespace crisis::sweep {

struct SweepGrid {
  std::vector<std::size_t> n_neighbors;
  std::vector<double> min_dist;
  std::vector<std::size_t> min_cluster_size;

  static SweepGrid standard() {
    return {{15, 20, 25, 30}, {0.0, 0.01}, {50, 100, 150, 200, 250, 300, 350, 400}};
  }
  std::size_t size() const { return n_neighbors.size() * min_dist.size() * min_cluster_size.size(); }
};

struct GridPoint {
  std::size_t n_neighbors = 15;
  double min_dist = 0.0;
  std::size_t min_cluster_size = 50;
  std::size_t min_samples = 25;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

inline std::size_t derived_min_samples(std::size_t min_cluster_size) {
  return std::max<std::size_t>(1, min_cluster_size / 2);
}

// Cartesian product in (n_neighbors, min_dist, min_cluster_size) order.
inline std::vector<GridPoint> enumerate(const SweepGrid& grid) {
  std::vector<GridPoint> out;
  for (auto nn : grid.n_neighbors)
    for (auto md : grid.min_dist)
      for (auto mcs : grid.min_cluster_size) out.push_back({nn, md, mcs, derived_min_samples(mcs)});
  return out;
}

struct GridScore {
  GridPoint point;
  std::optional<double> coherence;
  std::size_t num_topics = 0;
  double outlier_fraction = 0.0;
  std::string error;
};

struct GridSweep {
  std::optional<std::size_t> best;  // index into scores
  std::vector<GridScore> scores;
};

// Scores one clustering; may be called concurrently.
using ClusterEvaluator = std::function<double(const GridPoint&, const hdbscan::ClusterAssignment&)>;

// Higher coherence wins; ties go to fewer clusters, then the smaller
// min_cluster_size, then enumeration order.
inline std::optional<std::size_t> pick_best(const std::vector<GridScore>& scores) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    if (!s.coherence) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = scores[*best];
    if (*s.coherence != *b.coherence) {
      if (*s.coherence > *b.coherence) best = i;
    } else if (s.num_topics != b.num_topics) {
      if (s.num_topics < b.num_topics) best = i;
    } else if (s.point.min_cluster_size < b.point.min_cluster_size) {
      best = i;
    }
  }
  return best;
}

// Each (n_neighbors, min_dist) reduction is computed once and shared by all
// clusterings that use it.
inline GridSweep sweep_grid(const DenseMatrix<float>& x, const SweepGrid& grid, const reduce::ReducerConfig& base,
                            const ClusterEvaluator& evaluator, std::span<const std::uint64_t> point_keys = {},
                            std::size_t max_parallel = 1) {
  if (grid.size() == 0) throw ConfigError("sweep grid is empty");
  const auto points = enumerate(grid);
  const std::size_t workers = std::max<std::size_t>(1, max_parallel);
  auto run_all = [workers](std::size_t count, const std::function<void(std::size_t)>& fn) {
    for (std::size_t start = 0; start < count; start += workers) {
      std::vector<std::future<void>> batch;
      for (std::size_t i = start; i < std::min(count, start + workers); ++i)
        batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, fn, i));
      for (auto& f : batch) f.get();
    }
  };

  std::vector<std::pair<std::size_t, double>> reductions_needed;
  for (auto nn : grid.n_neighbors)
    for (auto md : grid.min_dist) reductions_needed.emplace_back(nn, md);
  std::vector<std::optional<reduce::Reduction>> reductions(reductions_needed.size());
  std::vector<std::string> reduction_errors(reductions_needed.size());
  run_all(reductions_needed.size(), [&](std::size_t i) {
    auto cfg = base;
    cfg.n_neighbors = reductions_needed[i].first;
    cfg.min_dist = reductions_needed[i].second;
    try {
      reductions[i] = reduce::reduce(x, cfg, point_keys);
    } catch (const std::exception& e) {
      reduction_errors[i] = e.what();
    }
  });
  auto reduction_index = [&](const GridPoint& p) {
    for (std::size_t i = 0; i < reductions_needed.size(); ++i)
      if (reductions_needed[i] == std::pair(p.n_neighbors, p.min_dist)) return i;
    return reductions_needed.size();
  };

  GridSweep out;
  out.scores.resize(points.size());
  run_all(points.size(), [&](std::size_t i) {
    auto& s = out.scores[i];
    s.point = points[i];
    const auto r = reduction_index(points[i]);
    if (!reductions[r]) {
      s.error = reduction_errors[r];
      return;
    }
    try {
      const auto assignment =
          hdbscan::cluster(reductions[r]->embedding, {points[i].min_cluster_size, points[i].min_samples});
      s.num_topics = assignment.num_clusters;
      s.outlier_fraction = assignment.noise_fraction();
      const double c = evaluator(points[i], assignment);
      if (!std::isfinite(c)) throw Error("non-finite coherence");
      s.coherence = c;
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });
  for (const auto& s : out.scores)
    if (!s.error.empty())
      spdlog::warn("sweep: ({}, {}, {}) failed: {}", s.point.n_neighbors, s.point.min_dist, s.point.min_cluster_size,
                   s.error);
  out.best = pick_best(out.scores);
  return out;
}

inline std::string score_table_csv(const GridSweep& sweep) {
  std::string out = "n_neighbors,min_dist,min_cluster_size,min_samples,num_topics,coherence,outlier_fraction\n";
  for (const auto& s : sweep.scores) {
    out += std::to_string(s.point.n_neighbors) + "," + format_fixed(s.point.min_dist, 2) + "," +
           std::to_string(s.point.min_cluster_size) + "," + std::to_string(s.point.min_samples) + "," +
           std::to_string(s.num_topics) + "," + (s.coherence ? format_fixed(*s.coherence, 6) : std::string()) + "," +
           format_fixed(s.outlier_fraction, 6) + "\n";
  }
  return out;
}

}  // namespace crisis::sweep
