#pragma once

// Exact k-nearest-neighbour graph by brute force.

#include "crisis/common.hpp"

namespace crisis::knn {

struct KnnGraph {
  std::size_t k = 0;
  DenseMatrix<std::int32_t> indices;  // n x k
  DenseMatrix<double> distances;      // n x k, non-decreasing per row
};

// Self is excluded; equal distances order by the smaller index.
template <typename T>
KnnGraph knn_graph(const DenseMatrix<T>& x, std::size_t k, std::size_t max_threads = 0) {
  const std::size_t n = x.rows();
  if (k == 0 || k >= n) throw ConfigError("k must satisfy 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  KnnGraph g{k, DenseMatrix<std::int32_t>(n, k), DenseMatrix<double>(n, k)};
  parallel_for(
      n,
      [&](std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, std::int32_t>> cand(n - 1);
        for (std::size_t i = begin; i < end; ++i) {
          std::size_t c = 0;
          for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand[c++] = {euclidean(x.row(i), x.row(j)), static_cast<std::int32_t>(j)};
          std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
          for (std::size_t r = 0; r < k; ++r) {
            g.distances(i, r) = cand[r].first;
            g.indices(i, r) = cand[r].second;
          }
        }
      },
      max_threads);
  return g;
}

}  // namespace crisis::knn
