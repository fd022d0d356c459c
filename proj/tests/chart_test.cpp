#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"
#include "treeformer/chart.hpp"

namespace treeformer {
namespace {

std::size_t enumerated_cells(std::size_t n, std::size_t h_max) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      count += (j - i + 1 <= h_max) ? 1 : 0;
    }
  }
  return count;
}

SpanChart filled_chart(std::size_t n, std::size_t h_max, std::size_t d, Rng& rng) {
  SpanChart chart(n, h_max, d);
  for (std::size_t h = 1; h <= chart.max_height(); ++h) {
    chart.write_level(h, testing::random_tensor({n - h + 1, d}, rng), 0);
  }
  return chart;
}

TEST(SpanChart, CellCounts) {
  EXPECT_EQ(SpanChart(5, 5, 4).cell_count(), 15u);
  EXPECT_EQ(SpanChart(5, 3, 4).cell_count(), 12u);
  EXPECT_EQ(SpanChart(1, 1, 4).cell_count(), 1u);
}

TEST(SpanChart, CellCountMatchesEnumeration) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t h = 1; h <= n; ++h) {
      EXPECT_EQ(SpanChart(n, h, 2).cell_count(), enumerated_cells(n, h)) << n << "," << h;
      EXPECT_EQ(cell_count(n, h), enumerated_cells(n, h));
    }
  }
}

TEST(SpanChart, HeightAboveLengthIsClamped) {
  const SpanChart chart(3, 10, 2);
  EXPECT_EQ(chart.max_height(), 3u);
  EXPECT_EQ(chart.cell_count(), 6u);
}

TEST(SpanChart, EmptySequenceIsRejected) {
  try {
    SpanChart(0, 1, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_input);
  }
}

TEST(SpanChart, StartsUnoccupied) {
  const SpanChart chart(4, 4, 2);
  for (std::size_t h = 1; h <= 4; ++h) {
    for (Span s : chart.cells_of_length(h)) {
      EXPECT_FALSE(chart.occupied(s));
    }
  }
  EXPECT_FALSE(chart.complete());
}

TEST(SplitPairs, FiveTokenSpan) {
  const auto pairs = split_pairs({0, 4});
  ASSERT_EQ(pairs.size(), 4u);
  const std::vector<SplitPair> expected = {
      {{0, 0}, {1, 4}}, {{0, 1}, {2, 4}}, {{0, 2}, {3, 4}}, {{0, 3}, {4, 4}}};
  EXPECT_EQ(pairs, expected);
}

TEST(SplitPairs, LengthTwoSpanHasOneSplit) {
  const auto pairs = split_pairs({3, 4});
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0], (SplitPair{{3, 3}, {4, 4}}));
}

TEST(SplitPairs, LengthOneSpanIsContractError) {
  try {
    split_pairs({2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(SplitPairs, FullChartOverFiveTokensHasTwentySplits) {
  const SpanChart chart(5, 5, 1);
  std::size_t total = 0;
  for (std::size_t h = 2; h <= 5; ++h) {
    for (Span s : chart.cells_of_length(h)) {
      total += split_pairs(s).size();
    }
  }
  EXPECT_EQ(total, 20u);
}

TEST(SplitPairs, ChildrenTileTheParent) {
  for (std::size_t n = 2; n <= 12; ++n) {
    const SpanChart chart(n, n, 1);
    for (std::size_t h = 2; h <= n; ++h) {
      for (Span s : chart.cells_of_length(h)) {
        std::size_t prev_k = 0;
        bool first = true;
        for (const auto& [left, right] : split_pairs(s)) {
          EXPECT_EQ(left.i, s.i);
          EXPECT_EQ(right.j, s.j);
          EXPECT_EQ(left.j + 1, right.i);
          EXPECT_EQ(left.length() + right.length(), s.length());
          if (!first) {
            EXPECT_GT(left.j, prev_k);
          }
          prev_k = left.j;
          first = false;
        }
      }
    }
  }
}

TEST(CellsOfLength, CountsAndOrder) {
  const SpanChart chart(7, 7, 1);
  EXPECT_EQ(SpanChart(5, 5, 1).cells_of_length(1).size(), 5u);
  EXPECT_EQ(SpanChart(5, 5, 1).cells_of_length(5).size(), 1u);
  const auto spans = chart.cells_of_length(3);
  ASSERT_EQ(spans.size(), 5u);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    EXPECT_EQ(spans[k], (Span{k, k + 2}));
  }
}

TEST(CellsOfLength, OutOfRangeIsContractError) {
  const SpanChart chart(5, 3, 1);
  for (std::size_t bad : {std::size_t{0}, std::size_t{4}}) {
    try {
      chart.cells_of_length(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
  }
}

TEST(SpanChart, OffsetsAreABijectionOntoTheArena) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t h = 1; h <= n; ++h) {
      const SpanChart chart(n, h, 1);
      std::set<std::size_t> seen;
      for (std::size_t len = 1; len <= h; ++len) {
        for (Span s : chart.cells_of_length(len)) {
          seen.insert(chart.offset(s));
        }
      }
      EXPECT_EQ(seen.size(), chart.cell_count());
      EXPECT_EQ(*seen.rbegin(), chart.cell_count() - 1);
    }
  }
}

TEST(SpanChart, SpansLongerThanHeightAreNotAddressable) {
  const SpanChart chart(6, 3, 1);
  try {
    chart.offset({0, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::index);
  }
}

TEST(SpanChart, BottomUpDisciplineIsEnforced) {
  Rng rng(1);
  SpanChart chart(4, 4, 2);
  const Tensor row = testing::random_tensor({1, 2}, rng);
  try {
    chart.write({0, 1}, row, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
  chart.write_level(1, testing::random_tensor({4, 2}, rng), 0);
  chart.write({0, 1}, row, 0);
  EXPECT_TRUE(chart.occupied({0, 1}));
  EXPECT_FALSE(chart.level_complete(2));
}

TEST(SpanChart, CellWidthMustMatch) {
  SpanChart chart(2, 2, 3);
  try {
    chart.write({0, 0}, Tensor::zeros({1, 2}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(SpanChart, ReadingAnEmptyCellIsContractError) {
  const SpanChart chart(2, 2, 1);
  try {
    chart.cell({1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(Flatten, EntryCountsAndOrder) {
  Rng rng(2);
  const SpanChart chart = filled_chart(5, 3, 2, rng);
  const auto all = chart.flatten();
  EXPECT_EQ(all.size(), 12u);
  for (std::size_t k = 1; k < all.size(); ++k) {
    const Span a = all[k - 1].span;
    const Span b = all[k].span;
    EXPECT_TRUE(a.length() < b.length() || (a.length() == b.length() && a.i < b.i));
  }
  const auto level3 = chart.flatten({3, 3});
  ASSERT_EQ(level3.size(), 3u);
  for (const auto& cell : level3) {
    EXPECT_EQ(cell.span.length(), 3u);
  }
  EXPECT_EQ(filled_chart(1, 1, 2, rng).flatten().size(), 1u);
}

TEST(Flatten, IsStableAcrossCalls) {
  Rng rng(3);
  const SpanChart chart = filled_chart(6, 4, 3, rng);
  const auto first = chart.flatten();
  const auto second = chart.flatten();
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t k = 0; k < first.size(); ++k) {
    EXPECT_EQ(first[k].span, second[k].span);
    EXPECT_EQ(first[k].vector.data(), second[k].vector.data());
  }
  const Tensor stacked = chart.flatten_tensor();
  ASSERT_EQ(stacked.rows(), first.size());
  for (std::size_t k = 0; k < first.size(); ++k) {
    EXPECT_EQ(testing::max_abs_diff(stacked.row(k), first[k].vector), 0.0);
  }
}

TEST(Flatten, IncompleteChartIsContractError) {
  Rng rng(4);
  SpanChart chart(3, 3, 2);
  chart.write_level(1, testing::random_tensor({3, 2}, rng), 0);
  try {
    chart.flatten();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(SpanChart, ChartBytesIsCellsTimesWidth) {
  const SpanChart chart(8, 3, 16);
  EXPECT_EQ(chart.chart_bytes(), chart.cell_count() * 16 * sizeof(Real));
}

TEST(SpanChart, RenderShowsOneLinePerLevelOneBased) {
  Rng rng(5);
  SpanChart chart = filled_chart(3, 2, 2, rng);
  chart.set_split_weights({0, 1}, {Real(1)});
  const std::string text = chart.render(2);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("[1,2] k=1:1.00"), std::string::npos);
  EXPECT_NE(text.find("[3,3]"), std::string::npos);
  EXPECT_EQ(text.find("[0,"), std::string::npos);
}

}  // namespace
}  // namespace treeformer
