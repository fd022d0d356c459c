#include <gtest/gtest.h>

#include "test_util.hpp"
#include "treeformer/encoder.hpp"
#include "treeformer/grad_check.hpp"

// Built once per precision.
namespace treeformer {
namespace {

using testing::random_tensor;

std::vector<GradCheckInput> inputs_of(const TreeformerParams& p, const Tensor& tokens) {
  std::vector<GradCheckInput> inputs = {{"W", p.W}, {"w", p.w}, {"tokens", tokens}};
  if (p.b.defined()) {
    inputs.push_back({"b", p.b});
  }
  if (p.Q.defined()) {
    inputs.push_back({"Q", p.Q});
    inputs.push_back({"K", p.K});
  }
  return inputs;
}

void expect_passes(const GradCheckReport& report) {
  for (const auto& entry : report.entries) {
    EXPECT_LE(entry.max_rel_error, testing::grad_tolerance()) << entry.name;
  }
}

TEST(EncoderGrad, SequentialChartLoss) {
  Rng rng(1);
  for (int variant = 0; variant < 3; ++variant) {
    TreeformerConfig config;
    config.dim = 8;
    config.max_height = 4;
    config.learned_qk = variant != 1;
    config.compose_tanh = variant == 2;
    const TreeformerParams p = TreeformerParams::init(config, rng);
    Tensor tokens = testing::param({6, 8}, rng);
    const std::size_t cells = cell_count(6, 4);
    const Tensor w = random_tensor({cells, 8}, rng);
    const auto report = grad_check(
        [&] { return sum(mul(encode_sequential(tokens, config, p).flatten_tensor(), w)); },
        inputs_of(p, tokens), default_fd_step());
    expect_passes(report);
  }
}

TEST(EncoderGrad, LevelwiseSummaryLoss) {
  Rng rng(2);
  TreeformerConfig config;
  config.dim = 8;
  config.max_height = 3;
  const TreeformerParams p = TreeformerParams::init(config, rng);
  Tensor tokens = testing::param({9, 8}, rng);
  const std::size_t offsets[] = {0, 5, 6, 9};
  const Tensor w = random_tensor({3, 8}, rng);
  const auto report = grad_check(
      [&] {
        const auto charts = encode_levelwise(tokens, offsets, config, p);
        return sum(mul(top_level_summaries(charts), w));
      },
      inputs_of(p, tokens), default_fd_step());
  expect_passes(report);
}

TEST(EncoderGrad, CorruptedComposeBackwardIsDetected) {
  Rng rng(3);
  TreeformerConfig config;
  config.dim = 8;
  config.max_height = 4;
  const TreeformerParams p = TreeformerParams::init(config, rng);
  Tensor tokens = testing::param({6, 8}, rng);
  const Tensor w = random_tensor({cell_count(6, 4), 8}, rng);
  const FaultScope fault(Fault::flip_concat_grad);
  const auto report = grad_check(
      [&] { return sum(mul(encode_sequential(tokens, config, p).flatten_tensor(), w)); },
      inputs_of(p, tokens), default_fd_step());
  EXPECT_GE(report.max_rel_error(), 0.5);
}

}  // namespace
}  // namespace treeformer
