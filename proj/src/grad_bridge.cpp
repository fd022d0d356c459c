#include "treeformer/grad_bridge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace treeformer {

namespace {

constexpr double kScaleFloor = 1e-3;

// Richardson-extrapolated central difference at steps h, 2h, 3h, each divided
// by the perturbation actually stored.
double numeric_derivative(f64::LossProbe& probe, const std::string& name, std::size_t index,
                          double x, double h) {
  double d[3];
  for (int k = 1; k <= 3; ++k) {
    const double plus = probe.set(name, index, x + k * h);
    const double up = probe.loss();
    const double minus = probe.set(name, index, x - k * h);
    const double down = probe.loss();
    d[k - 1] = (up - down) / (plus - minus);
  }
  probe.set(name, index, x);
  return (15 * d[0] - 6 * d[1] + d[2]) / 10;
}

}  // namespace

ModelGradCheck model_grad_check(const RunConfig& config, const std::vector<Example>& examples,
                                const ModelGradCheckOptions& options) {
  require(!examples.empty(), ErrorKind::empty_input, "model_grad_check: no examples");
  require(options.step > 0, ErrorKind::config, "model_grad_check: step must be positive");
  ModelGradCheck check;
  NamedValues values;
  NamedValues analytic;
  if (options.analytic_64bit) {
    check.precision = "64-bit";
    check.tolerance = 1e-6;
    const f64::LossProbe model(config, examples);
    values = model.values();
    analytic = model.gradients(options.flip_concat_grad);
  } else {
    check.precision = "32-bit";
    check.tolerance = 1e-3;
    const f32::LossProbe model(config, examples);
    values = model.values();
    analytic = model.gradients(options.flip_concat_grad);
  }

  f64::LossProbe oracle(config, examples);
  oracle.set_values(values);
  double largest_scale = 0;
  for (const auto& [name, x] : values) {
    GradGroupReport group;
    group.name = name;
    const std::size_t count =
        options.max_elements == 0 ? x.size() : std::min(x.size(), options.max_elements);
    for (std::size_t i = 0; i < count; ++i) {
      // Spread sampled elements over the whole tensor.
      const std::size_t index = count == x.size() ? i : i * x.size() / count;
      const double numeric = numeric_derivative(oracle, name, index, x[index], options.step);
      const double a = analytic.at(name)[index];
      group.max_abs_error = std::max(group.max_abs_error, std::abs(a - numeric));
      group.scale = std::max({group.scale, std::abs(a), std::abs(numeric)});
    }
    group.elements = count;
    largest_scale = std::max(largest_scale, group.scale);
    check.groups.push_back(group);
  }
  for (GradGroupReport& group : check.groups) {
    const double denom = std::max(group.scale, kScaleFloor * largest_scale);
    group.max_rel_error = denom > 0 ? group.max_abs_error / denom : group.max_abs_error;
    check.max_rel_error = std::max(check.max_rel_error, group.max_rel_error);
  }
  return check;
}

std::string format_grad_check(const ModelGradCheck& check) {
  std::string out;
  char line[256];
  for (const GradGroupReport& g : check.groups) {
    std::snprintf(line, sizeof line, "%-48s n=%-5zu max_rel_err=%.3e %s\n", g.name.c_str(),
                  g.elements, g.max_rel_error, g.max_rel_error <= check.tolerance ? "ok" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "%s analytic vs 64-bit finite differences: max_rel_err=%.3e tol=%.0e %s\n",
                check.precision.c_str(), check.max_rel_error, check.tolerance,
                check.passed() ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace treeformer
