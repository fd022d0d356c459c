#include "treeformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

double GradCheckReport::max_rel_error() const {
  double worst = 0;
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_rel_error);
  }
  return worst;
}

double default_fd_step() { return sizeof(Real) == sizeof(float) ? 1e-1 : 1e-6; }

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<GradCheckInput> inputs,
                           double step, std::size_t max_elements_per_input) {
  for (auto& in : inputs) {
    require(in.tensor.is_leaf(), ErrorKind::contract, "grad_check: '" + in.name + "' is not a leaf");
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  {
    GradTape tape;
    Tensor loss = f();
    require(loss.numel() == 1, ErrorKind::contract, "grad_check: function is not scalar-valued");
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& in : inputs) {
    GradCheckEntry entry;
    entry.name = in.name;
    const std::size_t n = in.tensor.numel();
    const std::size_t count = max_elements_per_input == 0 ? n : std::min(n, max_elements_per_input);
    const std::vector<Real> analytic = in.tensor.has_grad()
                                           ? std::vector<Real>(in.tensor.grad().begin(), in.tensor.grad().end())
                                           : std::vector<Real>(n, Real{0});
    // Spread the checked elements evenly when only a subset is requested.
    const std::size_t stride = std::max<std::size_t>(1, n / count);
    auto values = in.tensor.mutable_data();
    for (std::size_t c = 0, i = 0; c < count && i < n; ++c, i += stride) {
      const Real original = values[i];
      // Central difference over the perturbation actually stored, not the
      // nominal one.
      auto central = [&](double h) {
        values[i] = static_cast<Real>(original + h);
        const double hi = values[i];
        const double plus = static_cast<double>(f().item());
        values[i] = static_cast<Real>(original - h);
        const double lo = values[i];
        const double minus = static_cast<double>(f().item());
        values[i] = original;
        return (plus - minus) / (hi - lo);
      };
      // Richardson extrapolation over h, 2h, 3h cancels the h^2 and h^4
      // truncation terms.
      const double numeric = (15 * central(step) - 6 * central(2 * step) + central(3 * step)) / 10;
      const double a = static_cast<double>(analytic[i]);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.scale = std::max({entry.scale, std::abs(a), std::abs(numeric)});
      ++entry.elements;
    }
    report.entries.push_back(entry);
    in.tensor.zero_grad();
  }
  double overall = 0;
  for (const auto& e : report.entries) {
    overall = std::max(overall, e.scale);
  }
  for (auto& e : report.entries) {
    const double denominator = std::max(e.scale, kGradScaleFloor * overall);
    e.max_rel_error = denominator > 0 ? e.max_abs_error / denominator : e.max_abs_error;
  }
  return report;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
