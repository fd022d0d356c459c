#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "treeformer/common.hpp"
#include "treeformer/data.hpp"
#include "treeformer/run_config.hpp"

namespace treeformer {

using NamedValues = std::map<std::string, std::vector<double>>;

namespace f32 {
#include "treeformer/detail/loss_probe.inc"
}  // namespace f32
namespace f64 {
#include "treeformer/detail/loss_probe.inc"
}  // namespace f64

struct GradGroupReport {
  std::string name;
  std::size_t elements = 0;
  double max_abs_error = 0;
  double scale = 0;
  double max_rel_error = 0;
};

struct ModelGradCheck {
  std::string precision;  // "32-bit" or "64-bit": precision of the analytic side
  std::vector<GradGroupReport> groups;
  double max_rel_error = 0;
  double tolerance = 0;

  bool passed() const { return max_rel_error <= tolerance; }
};

struct ModelGradCheckOptions {
  bool analytic_64bit = false;     // false: 32-bit reverse mode, tolerance 1e-3
  bool flip_concat_grad = false;   // mutation test
  double step = 1e-4;              // finite-difference step of the 64-bit oracle
  std::size_t max_elements = 0;    // per parameter tensor; 0 checks every element
};

// Compares reverse-mode gradients of the configured model's loss on
// `examples` with 64-bit central differences (steps h, 2h, 3h, Richardson
// extrapolated) evaluated at the same parameter values. The error of a
// parameter tensor is its largest absolute deviation over the larger of its
// gradient scale and 1e-3 times the largest scale of any tensor.
ModelGradCheck model_grad_check(const RunConfig& config, const std::vector<Example>& examples,
                                const ModelGradCheckOptions& options = {});

std::string format_grad_check(const ModelGradCheck& check);

}  // namespace treeformer
