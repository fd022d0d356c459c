#include "treeformer/optim.hpp"

#include <algorithm>
#include <cmath>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Tensor& p : params_) {
    require(p.requires_grad(), ErrorKind::contract, "optimizer parameters must require gradients");
  }
  if (config_.kind == OptimizerKind::adam) {
    for (const Tensor& p : params_) {
      first_moment_.emplace_back(p.numel(), 0.0);
      second_moment_.emplace_back(p.numel(), 0.0);
    }
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) {
    p.zero_grad();
  }
}

void Optimizer::step() {
  double norm_sq = 0;
  for (const Tensor& p : params_) {
    for (Real g : p.grad()) {
      if (!std::isfinite(g)) {
        zero_grad();
        fail(ErrorKind::numeric, "non-finite gradient; optimizer step aborted");
      }
      norm_sq += static_cast<double>(g) * g;
    }
  }
  double clip = 1.0;
  if (config_.clip_norm > 0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > config_.clip_norm) {
      clip = config_.clip_norm / norm;
    }
  }
  ++steps_;
  const double lr = scheduled_lr(config_, steps_);
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) {
      continue;
    }
    auto value = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * clip;
      double update = g;
      if (config_.kind == OptimizerKind::adam) {
        double& m = first_moment_[k][i];
        double& v = second_moment_[k][i];
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
        update = (m / bias1) / (std::sqrt(v / bias2) + config_.eps);
      }
      double x = static_cast<double>(value[i]);
      x -= lr * (update + config_.weight_decay * x);
      value[i] = static_cast<Real>(x);
    }
  }
  zero_grad();
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
