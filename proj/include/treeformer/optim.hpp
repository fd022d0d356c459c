#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "treeformer/config.hpp"
#include "treeformer/tensor.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// Updates parameters in place from their accumulated gradients, then zeroes
// the gradients. A non-finite gradient aborts the step before any parameter
// changes and raises a numeric error; the gradients are still cleared.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig config);

  void step();
  void zero_grad();
  std::size_t steps_taken() const noexcept { return steps_; }
  double current_lr() const { return scheduled_lr(config_, steps_ + 1); }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t steps_ = 0;
};

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
