#include <gtest/gtest.h>

#include <filesystem>

#include "treeformer/sweep.hpp"

namespace treeformer {
namespace {

bool shape(std::vector<double> m) { return sweep_shape_ok(m); }

TEST(SweepShape, RiseThenPlateauOrDip) {
  EXPECT_TRUE(shape({0.90, 0.93, 0.96, 0.97, 0.97}));
  EXPECT_TRUE(shape({0.90, 0.93, 0.97, 0.95, 0.91}));
  EXPECT_TRUE(shape({0.5, 0.9}));
  // A small wobble on the way up is tolerated, a real drop is not.
  EXPECT_TRUE(shape({0.90, 0.92, 0.91, 0.97, 0.96}));
  EXPECT_FALSE(shape({0.90, 0.95, 0.80, 0.97, 0.96}));
}

TEST(SweepShape, RequiresAGainOverTheFirstValue) {
  EXPECT_FALSE(shape({0.97, 0.96, 0.95}));
  EXPECT_FALSE(shape({0.9, 0.9, 0.9}));
  EXPECT_FALSE(shape({0.9}));
  EXPECT_FALSE(shape({}));
}

TEST(SweepShape, ToleranceIsInclusive) {
  const std::vector<double> m = {0.5, 0.8, 0.78, 0.9};
  EXPECT_TRUE(sweep_shape_ok(m, 0.02 + 1e-12));
  EXPECT_FALSE(sweep_shape_ok(m, 0.01));
}

TEST(SweepAxisNames, RoundTrip) {
  EXPECT_EQ(parse_sweep_axis("height"), SweepAxis::height);
  EXPECT_EQ(parse_sweep_axis("depth"), SweepAxis::depth);
  EXPECT_EQ(to_string(SweepAxis::depth), "depth");
  try {
    parse_sweep_axis("width");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(RunSweep, PreconditionsAndCsv) {
  RunConfig base;
  const std::vector<Example> none;
  const std::vector<std::size_t> empty;
  try {
    run_sweep(base, SweepAxis::height, empty, none, none, ".");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_input);
  }
  const std::vector<std::size_t> one = {2};
  try {
    run_sweep(base, SweepAxis::height, one, none, none, "/nonexistent/dir");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::path);
  }
  const SweepRow rows[] = {{1, 0.5, 10, 20, "a.ckpt"}, {2, 0.75, 20, 20, "b.ckpt"}};
  EXPECT_EQ(format_sweep_csv(SweepAxis::height, rows),
            "height,metric,best_step,steps,checkpoint\n"
            "1,0.500000,10,20,a.ckpt\n"
            "2,0.750000,20,20,b.ckpt\n");
}

}  // namespace
}  // namespace treeformer
