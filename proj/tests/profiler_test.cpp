#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "treeformer/chart.hpp"
#include "treeformer/profiler.hpp"

namespace treeformer {
namespace {

TEST(ClosedForm, PaperValues) {
  EXPECT_EQ(compositions_closed_form(1), 0u);
  EXPECT_EQ(compositions_closed_form(5), 20u);  // 0 + 4 + 6 + 6 + 4
  EXPECT_EQ(compositions_closed_form(8), 84u);
  EXPECT_EQ(compositions_height_limited(5, 1), 0u);
  EXPECT_EQ(compositions_height_limited(5, 2), 4u);
  EXPECT_EQ(compositions_height_limited(8, 3), 19u);  // 7*1 + 6*2
  EXPECT_EQ(compositions_height_limited(8, 8), compositions_closed_form(8));
}

TEST(ClosedForm, MatchesCubicPolynomial) {
  // sum (n-h+1)(h-1) = (n-1) n (n+1) / 6
  for (std::uint64_t n = 1; n <= 200; ++n) {
    EXPECT_EQ(compositions_closed_form(n), (n - 1) * n * (n + 1) / 6) << n;
  }
}

TEST(ClosedForm, MatchesBruteForceEnumeration) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t H = 1; H <= n; ++H) {
      EXPECT_EQ(compositions_brute_force(n, H), compositions_height_limited(n, H)) << n << "," << H;
    }
  }
}

TEST(ClosedForm, InvalidArgumentsAreContractErrors) {
  EXPECT_THROW(compositions_closed_form(0), Error);
  EXPECT_THROW(compositions_height_limited(4, 5), Error);
  EXPECT_THROW(compositions_height_limited(4, 0), Error);
}

TEST(ParallelWork, TriangularTotal) {
  EXPECT_EQ(parallel_work_per_level(1).total, 0u);
  const ParallelWork five = parallel_work_per_level(5);
  EXPECT_EQ(five.total, 10u);
  EXPECT_EQ(five.per_level, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  for (std::uint64_t n = 1; n <= 12; ++n) {
    EXPECT_EQ(parallel_work_per_level(n).total, n * (n - 1) / 2);
  }
}

TEST(Profile, CountersEqualClosedForms) {
  std::vector<ProfilePoint> points;
  for (std::size_t n : {2, 4, 8, 12}) {
    for (std::size_t H : {std::size_t{1}, std::size_t{2}, n}) {
      points.push_back({n, H});
    }
  }
  ProfileOptions options;
  options.dim = 8;
  options.time = false;
  const auto rows = profile_run(points, options);
  ASSERT_EQ(rows.size(), points.size());
  for (const ProfileRow& r : rows) {
    EXPECT_EQ(r.compositions, compositions_height_limited(r.n, r.H));
    EXPECT_EQ(r.level_steps, r.H - 1);
    EXPECT_EQ(r.cells, cell_count(r.n, r.H));
    EXPECT_EQ(r.chart_bytes, r.cells * 8 * sizeof(Real));
  }
  EXPECT_EQ(rows[points.size() - 1].compositions, compositions_closed_form(12));
}

TEST(Profile, HeightAboveLengthIsClamped) {
  const ProfilePoint p[] = {{3, 10}};
  ProfileOptions options;
  options.dim = 4;
  options.time = false;
  const auto rows = profile_run(p, options);
  EXPECT_EQ(rows[0].H, 3u);
  EXPECT_EQ(rows[0].compositions, 4u);
}

TEST(Profile, ExamplePoints) {
  const ProfilePoint p[] = {{8, 8}, {8, 3}};
  ProfileOptions options;
  options.dim = 4;
  options.repetitions = 5;
  const auto rows = profile_run(p, options);
  EXPECT_EQ(rows[0].compositions, 84u);
  EXPECT_EQ(rows[1].compositions, 19u);
  EXPECT_GT(rows[0].wall_ms, 0.0);
}

TEST(Profile, FixedHeightGrowsLinearly) {
  // With H = 8: sum_{h=2..8} (n-h+1)(h-1) = 28n - 140 for every n >= 8.
  std::vector<ProfilePoint> points;
  for (std::size_t n : {16, 32, 64, 128, 256, 512}) {
    points.push_back({n, 8});
  }
  ProfileOptions options;
  options.dim = 2;
  options.time = false;
  const auto rows = profile_run(points, options);
  double previous_slope = 10;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].compositions, 28 * rows[k].n - 140) << rows[k].n;
    if (k > 0) {
      const double x[] = {double(rows[k - 1].n), double(rows[k].n)};
      const double y[] = {double(rows[k - 1].compositions), double(rows[k].compositions)};
      const double slope = loglog_slope(x, y);
      EXPECT_LT(slope, previous_slope);
      EXPECT_GT(slope, 1.0);
      previous_slope = slope;
    }
  }
  // The negative intercept keeps the local slope above 1; it enters the
  // [0.9, 1.1] band from n = 64 on.
  EXPECT_LE(previous_slope, 1.1);
}

TEST(Profile, FullHeightFollowsTheCubic) {
  std::vector<ProfilePoint> points;
  for (std::size_t n : {4, 8, 16, 24}) {
    points.push_back({n, n});
  }
  ProfileOptions options;
  options.dim = 2;
  options.time = false;
  for (const ProfileRow& r : profile_run(points, options)) {
    EXPECT_EQ(r.compositions, (r.n - 1) * r.n * (r.n + 1) / 6);
  }
}

TEST(Profile, CsvLayout) {
  ProfileRow r;
  r.n = 4;
  r.H = 2;
  r.compositions = 3;
  r.pool_candidates = 3;
  r.cells = 7;
  r.level_steps = 1;
  r.wall_ms = 0.5;
  r.chart_bytes = 112;
  const ProfileRow rows[] = {r};
  EXPECT_EQ(format_profile_csv(rows),
            "n,H,compositions,pool_candidates,cells,level_steps,wall_ms,chart_bytes\n"
            "4,2,3,3,7,1,0.5000,112\n");
}

TEST(Slope, KnownPowerLaws) {
  const double x[] = {1, 2, 4, 8};
  const double cubic[] = {1, 8, 64, 512};
  const double flat[] = {3, 3, 3, 3};
  EXPECT_NEAR(loglog_slope(x, cubic), 3.0, 1e-12);
  EXPECT_NEAR(loglog_slope(x, flat), 0.0, 1e-12);
}

}  // namespace
}  // namespace treeformer
