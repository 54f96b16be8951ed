#include "crisis/sweep.hpp"
#include "blob_fixtures.hpp"

#include <gtest/gtest.h>

namespace crisis::sweep {
namespace {

TEST(SweepGrid, StandardGridHas64Points) {
  const auto grid = SweepGrid::standard();
  const auto points = enumerate(grid);
  EXPECT_EQ(grid.size(), 64u);
  EXPECT_EQ(points.size(), 64u);
  for (const auto& p : points) EXPECT_EQ(p.min_samples, p.min_cluster_size / 2);
  EXPECT_EQ(points.front(), (GridPoint{15, 0.0, 50, 25}));
  EXPECT_EQ(points.back(), (GridPoint{30, 0.01, 400, 200}));
}

TEST(SweepGrid, MinSamplesIsHalfRoundedDown) {
  EXPECT_EQ(derived_min_samples(51), 25u);
  EXPECT_EQ(derived_min_samples(2), 1u);
  EXPECT_EQ(derived_min_samples(3), 1u);
}

GridScore score(std::size_t nn, std::size_t mcs, std::optional<double> c, std::size_t topics) {
  GridScore s;
  s.point = {nn, 0.0, mcs, mcs / 2};
  s.coherence = c;
  s.num_topics = topics;
  return s;
}

TEST(PickBest, TieBreaking) {
  EXPECT_EQ(pick_best({score(15, 50, 0.4, 5), score(15, 100, 0.6, 9), score(20, 50, std::nullopt, 2)}), 1u);
  EXPECT_EQ(pick_best({score(15, 50, 0.6, 9), score(15, 100, 0.6, 4)}), 1u);
  EXPECT_EQ(pick_best({score(15, 100, 0.6, 4), score(20, 50, 0.6, 4)}), 1u);
  EXPECT_EQ(pick_best({score(15, 50, 0.6, 4), score(20, 50, 0.6, 4)}), 0u);
  EXPECT_FALSE(pick_best({score(15, 50, std::nullopt, 4)}));
}

TEST(SweepGridRun, InjectedEvaluatorSelectsItsConfiguration) {
  const auto x = testing::make_blobs(3, 3, 30, 6, 0.3);
  SweepGrid grid{{10, 15}, {0.0, 0.01}, {10, 20}};
  reduce::ReducerConfig base;
  base.epochs = 30;
  const GridPoint target{15, 0.0, 20, 10};
  const auto result = sweep_grid(
      x, grid, base, [&](const GridPoint& p, const hdbscan::ClusterAssignment&) { return p == target ? 1.0 : 0.0; },
      {}, 4);
  ASSERT_TRUE(result.best);
  EXPECT_EQ(result.scores[*result.best].point, target);
  EXPECT_EQ(result.scores.size(), 8u);

  const auto csv = score_table_csv(result);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "n_neighbors,min_dist,min_cluster_size,min_samples,num_topics,coherence,outlier_fraction");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
}

TEST(SweepGridRun, FailuresAreRecordedAndExcluded) {
  const auto x = testing::make_blobs(4, 2, 20, 4, 0.3);
  SweepGrid grid{{5, 60}, {0.0}, {5}};  // 60 neighbours exceeds the row count
  reduce::ReducerConfig base;
  base.epochs = 20;
  const auto result = sweep_grid(x, grid, base, [](const GridPoint&, const hdbscan::ClusterAssignment& a) {
    return static_cast<double>(a.num_clusters);
  });
  ASSERT_EQ(result.scores.size(), 2u);
  EXPECT_TRUE(result.scores[0].coherence);
  EXPECT_FALSE(result.scores[1].coherence);
  EXPECT_FALSE(result.scores[1].error.empty());
  EXPECT_EQ(result.best, 0u);
  const auto csv = score_table_csv(result);
  EXPECT_NE(csv.find("60,0.00,5,2,0,,"), std::string::npos) << csv;
  EXPECT_THROW(sweep_grid(x, SweepGrid{}, base, {}), ConfigError);
}

TEST(SweepGridRun, ParallelAndSequentialAgree) {
  const auto x = testing::make_blobs(5, 3, 20, 4, 0.3);
  SweepGrid grid{{5, 8}, {0.0, 0.01}, {5, 10}};
  reduce::ReducerConfig base;
  base.epochs = 25;
  auto eval = [](const GridPoint&, const hdbscan::ClusterAssignment& a) { return 1.0 - a.noise_fraction(); };
  const auto seq = sweep_grid(x, grid, base, eval, {}, 1);
  const auto par = sweep_grid(x, grid, base, eval, {}, 8);
  EXPECT_EQ(score_table_csv(seq), score_table_csv(par));
}

}  // namespace
}  // namespace crisis::sweep
