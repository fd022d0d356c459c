#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "treeformer/tensor.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

inline constexpr double kGradScaleFloor = 1e-3;

struct GradCheckInput {
  std::string name;
  Tensor tensor;  // leaf; perturbed in place and restored
};

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_abs_error = 0;
  double scale = 0;          // max |gradient| over analytic and numeric values
  double max_rel_error = 0;  // max_abs_error / max(scale, floor)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

// Compares reverse-mode gradients of a scalar function against central
// differences at steps h, 2h and 3h combined by Richardson extrapolation, so
// the truncation error is O(h^6). The error for one input is its largest
// elementwise deviation divided by the largest gradient magnitude of that
// input, which stays meaningful when individual entries are near zero. Inputs
// whose gradients are structurally ~0 (an attention key bias) are measured
// against kGradScaleFloor times the largest scale of any input instead.
// `f` must be deterministic and build its graph from the given tensors.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<GradCheckInput> inputs,
                           double step, std::size_t max_elements_per_input = 0);

// Default central-difference step for the build precision.
double default_fd_step();

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
