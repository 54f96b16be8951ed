#pragma once

// Hierarchical density-based clustering: mutual-reachability minimum spanning
// tree, condensed cluster tree, and excess-of-mass cluster selection.

#include "crisis/common.hpp"
#include "crisis/knn.hpp"

#include <json.hpp>

#include <cfloat>
#include <map>
#include <numeric>
#include <set>

namespace crisis::hdbscan {

using nlohmann::json;

struct ClustererConfig {
  std::size_t min_cluster_size = 10;
  std::size_t min_samples = 5;  // counts the point itself

  void validate() const {
    if (min_cluster_size < 2) throw ConfigError("min_cluster_size must be >= 2");
    if (min_samples < 1 || min_samples > min_cluster_size)
      throw ConfigError("min_samples must lie in [1, min_cluster_size]");
  }
};

// Condensed-tree row. Children below n are points, others are clusters.
struct CondensedEdge {
  std::int64_t parent = 0;
  std::int64_t child = 0;
  double lambda = 0.0;
  std::size_t size = 0;
  friend bool operator==(const CondensedEdge&, const CondensedEdge&) = default;
};

struct ClusterAssignment {
  std::vector<int> labels;  // -1 = noise
  std::size_t num_clusters = 0;
  std::vector<std::size_t> cluster_sizes;
  std::vector<double> stabilities;
  std::vector<CondensedEdge> condensed_tree;

  double noise_fraction() const {
    if (labels.empty()) return 0.0;
    return static_cast<double>(std::count(labels.begin(), labels.end(), -1)) / static_cast<double>(labels.size());
  }
};

inline json condensed_tree_json(const ClusterAssignment& a) {
  json rows = json::array();
  for (const auto& e : a.condensed_tree)
    rows.push_back({{"parent", e.parent}, {"child", e.child}, {"lambda", e.lambda < DBL_MAX ? json(e.lambda) : json("inf")},
                    {"size", e.size}});
  return rows;
}

struct MstEdge {
  std::int32_t a = 0, b = 0;
  double weight = 0.0;
};

// Distance to the (min_samples - 1)-th nearest other point.
template <typename T>
std::vector<double> core_distances(const DenseMatrix<T>& x, std::size_t min_samples) {
  const std::size_t n = x.rows();
  std::vector<double> core(n, 0.0);
  if (min_samples <= 1 || n <= 1) return core;
  const std::size_t k = std::min(min_samples - 1, n - 1);
  const auto g = knn::knn_graph(x, k);
  for (std::size_t i = 0; i < n; ++i) core[i] = g.distances(i, k - 1);
  return core;
}

// Prim's algorithm over the implicit complete mutual-reachability graph.
template <typename T>
std::vector<MstEdge> mutual_reachability_mst(const DenseMatrix<T>& x, std::span<const double> core) {
  const std::size_t n = x.rows();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::int32_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    double next_w = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double w = std::max({core[current], core[j], euclidean(x.row(current), x.row(j))});
      if (w < best[j]) {
        best[j] = w;
        from[j] = static_cast<std::int32_t>(current);
      }
      if (best[j] < next_w) {
        next_w = best[j];
        next = j;
      }
    }
    in_tree[next] = 1;
    edges.push_back({from[next], static_cast<std::int32_t>(next), next_w});
    current = next;
  }
  return edges;
}

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Single-linkage hierarchy where all MST edges of equal weight merge in one
// step, so a level may join more than two components.
struct LevelTree {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> children;  // indexed by node - n
  std::vector<double> distance;
  std::vector<std::size_t> size;

  std::size_t root() const { return n + children.size() - 1; }
  std::size_t node_size(std::size_t v) const { return v < n ? 1 : size[v - n]; }
};

inline LevelTree build_level_tree(std::size_t n, std::vector<MstEdge> edges) {
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) { return a.weight < b.weight; });
  LevelTree t;
  t.n = n;
  UnionFind uf(n);
  std::vector<std::size_t> node_of(n);  // component representative -> tree node
  std::iota(node_of.begin(), node_of.end(), 0);
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].weight == edges[i].weight) ++j;
    // Components touched by this level, grouped by connectivity within it.
    std::vector<std::size_t> roots;
    for (std::size_t e = i; e < j; ++e) {
      roots.push_back(uf.find(edges[e].a));
      roots.push_back(uf.find(edges[e].b));
    }
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    std::vector<std::pair<std::size_t, std::size_t>> old_node;
    for (auto r : roots) old_node.emplace_back(r, node_of[r]);
    for (std::size_t e = i; e < j; ++e) uf.unite(edges[e].a, edges[e].b);
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (const auto& [r, node] : old_node) groups[uf.find(r)].push_back(node);
    for (auto& [rep, members] : groups) {
      std::size_t total = 0;
      for (auto v : members) total += t.node_size(v);
      t.children.push_back(std::move(members));
      t.distance.push_back(edges[i].weight);
      t.size.push_back(total);
      node_of[rep] = n + t.children.size() - 1;
    }
    i = j;
  }
  return t;
}

inline double to_lambda(double d) { return d > 0.0 ? 1.0 / d : DBL_MAX; }

inline void collect_points(const LevelTree& t, std::size_t v, std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack{v};
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    if (u < t.n) {
      out.push_back(u);
      continue;
    }
    for (auto c : t.children[u - t.n]) stack.push_back(c);
  }
}

}  // namespace detail

// Condensed tree: walking down from the root, children smaller than
// min_cluster_size drop their points out of the current cluster; a single
// large child continues the current cluster; several large children start
// new clusters. Cluster ids start at n with the root.
inline std::vector<CondensedEdge> condense(const detail::LevelTree& t, std::size_t min_cluster_size) {
  std::vector<CondensedEdge> out;
  const std::size_t n = t.n;
  if (t.children.empty()) return out;
  std::int64_t next_label = static_cast<std::int64_t>(n) + 1;
  std::vector<std::pair<std::size_t, std::int64_t>> stack{{t.root(), static_cast<std::int64_t>(n)}};
  std::vector<std::size_t> pts;
  while (!stack.empty()) {
    const auto [node, cluster] = stack.back();
    stack.pop_back();
    const auto idx = node - n;
    const double lambda = detail::to_lambda(t.distance[idx]);
    std::vector<std::size_t> big;
    for (auto c : t.children[idx]) {
      if (t.node_size(c) >= min_cluster_size) {
        big.push_back(c);
        continue;
      }
      pts.clear();
      detail::collect_points(t, c, pts);
      std::sort(pts.begin(), pts.end());
      for (auto p : pts) out.push_back({cluster, static_cast<std::int64_t>(p), lambda, 1});
    }
    if (big.size() == 1) {
      stack.emplace_back(big[0], cluster);
    } else if (big.size() > 1) {
      std::vector<std::pair<std::size_t, std::int64_t>> pending;
      for (auto c : big) {
        const auto label = next_label++;
        out.push_back({cluster, label, lambda, t.node_size(c)});
        pending.emplace_back(c, label);
      }
      // Reverse so that the first child is processed first.
      for (auto it = pending.rbegin(); it != pending.rend(); ++it) stack.push_back(*it);
    }
  }
  return out;
}

struct Selection {
  std::vector<std::int64_t> clusters;  // selected condensed-tree cluster ids
  std::map<std::int64_t, double> stability;
};

// Excess of mass: a cluster is kept unless its descendants' selected
// stability is strictly larger. The root is never selected.
inline Selection select_clusters(const std::vector<CondensedEdge>& tree, std::size_t n) {
  Selection sel;
  const auto root = static_cast<std::int64_t>(n);
  std::map<std::int64_t, double> birth{{root, 0.0}};
  std::map<std::int64_t, std::vector<std::int64_t>> kids;
  for (const auto& e : tree)
    if (e.child >= root) {
      birth[e.child] = e.lambda;
      kids[e.parent].push_back(e.child);
    }
  std::map<std::int64_t, double> stab;
  for (const auto& [c, b] : birth) stab[c] = 0.0;
  for (const auto& e : tree) stab[e.parent] += (e.lambda - birth[e.parent]) * static_cast<double>(e.size);
  sel.stability = stab;

  std::map<std::int64_t, bool> chosen;
  std::map<std::int64_t, double> value;
  for (auto it = birth.rbegin(); it != birth.rend(); ++it) {
    const auto c = it->first;
    double child_sum = 0.0;
    for (auto k : kids[c]) child_sum += value[k];
    if (c == root) break;
    if (!kids[c].empty() && child_sum > stab[c]) {
      chosen[c] = false;
      value[c] = child_sum;
    } else {
      chosen[c] = true;
      value[c] = stab[c];
    }
  }
  // Top-down: a chosen cluster shadows everything beneath it.
  std::vector<std::int64_t> stack(kids[root].rbegin(), kids[root].rend());
  while (!stack.empty()) {
    const auto c = stack.back();
    stack.pop_back();
    if (chosen[c]) {
      sel.clusters.push_back(c);
      continue;
    }
    for (auto it = kids[c].rbegin(); it != kids[c].rend(); ++it) stack.push_back(*it);
  }
  return sel;
}

inline ClusterAssignment assign_labels(std::vector<CondensedEdge> tree, const Selection& sel, std::size_t n) {
  ClusterAssignment out;
  out.labels.assign(n, -1);
  std::map<std::int64_t, std::int64_t> parent_of;
  for (const auto& e : tree) parent_of[e.child] = e.parent;
  std::set<std::int64_t> selected(sel.clusters.begin(), sel.clusters.end());
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t p = 0; p < n; ++p) {
    auto it = parent_of.find(static_cast<std::int64_t>(p));
    if (it == parent_of.end()) continue;
    for (std::int64_t c = it->second;;) {
      if (selected.count(c)) {
        members[c].push_back(p);
        break;
      }
      auto up = parent_of.find(c);
      if (up == parent_of.end()) break;
      c = up->second;
    }
  }
  std::vector<std::pair<std::size_t, std::int64_t>> order;
  for (const auto& [c, pts] : members) order.emplace_back(*std::min_element(pts.begin(), pts.end()), c);
  std::sort(order.begin(), order.end());
  for (std::size_t label = 0; label < order.size(); ++label) {
    const auto c = order[label].second;
    for (auto p : members[c]) out.labels[p] = static_cast<int>(label);
    out.cluster_sizes.push_back(members[c].size());
    out.stabilities.push_back(sel.stability.at(c));
  }
  out.num_clusters = order.size();
  out.condensed_tree = std::move(tree);
  return out;
}

template <typename T>
ClusterAssignment cluster(const DenseMatrix<T>& x, const ClustererConfig& config) {
  config.validate();
  const std::size_t n = x.rows();
  if (n < config.min_cluster_size) {
    spdlog::warn("hdbscan: {} points is fewer than min_cluster_size {}; everything is noise", n,
                 config.min_cluster_size);
    ClusterAssignment out;
    out.labels.assign(n, -1);
    return out;
  }
  const auto core = core_distances(x, config.min_samples);
  const auto mst = mutual_reachability_mst(x, core);
  const auto tree = detail::build_level_tree(n, mst);
  auto condensed = condense(tree, config.min_cluster_size);
  const auto sel = select_clusters(condensed, n);
  return assign_labels(std::move(condensed), sel, n);
}

}  // namespace crisis::hdbscan
