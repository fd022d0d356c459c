#include "treeformer/grad_bridge.hpp"

#include <numeric>

#include "treeformer/model.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

struct LossProbe::Impl {
  Model model;
  Batch batch;
};

LossProbe::LossProbe(const RunConfig& config, const std::vector<Example>& examples) {
  std::vector<std::size_t> all(examples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  impl_ = std::make_unique<Impl>(Impl{Model(config), make_batch(examples, all)});
}

LossProbe::~LossProbe() = default;

NamedValues LossProbe::values() const {
  NamedValues out;
  for (const auto& [name, t] : impl_->model.params().entries()) {
    out[name].assign(t.data().begin(), t.data().end());
  }
  return out;
}

void LossProbe::set_values(const NamedValues& values) {
  for (const auto& [name, v] : values) {
    Tensor t = impl_->model.params().get(name);
    require(v.size() == t.numel(), ErrorKind::dimension, "set_values: size mismatch for " + name);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      data[i] = static_cast<Real>(v[i]);
    }
  }
}

double LossProbe::set(const std::string& name, std::size_t index, double value) {
  Tensor t = impl_->model.params().get(name);
  require(index < t.numel(), ErrorKind::index, "LossProbe::set: index out of range");
  t.mutable_data()[index] = static_cast<Real>(value);
  return static_cast<double>(t.data()[index]);
}

double LossProbe::loss() const { return static_cast<double>(impl_->model.loss(impl_->batch).item()); }

NamedValues LossProbe::gradients(bool flip_concat_grad) const {
  for (const Tensor& t : impl_->model.parameters()) {
    Tensor(t).zero_grad();
  }
  {
    FaultScope fault(flip_concat_grad ? Fault::flip_concat_grad : Fault::none);
    GradTape tape;
    tape.backward(impl_->model.loss(impl_->batch));
  }
  NamedValues out;
  for (const auto& [name, t] : impl_->model.params().entries()) {
    auto& g = out[name];
    if (t.has_grad()) {
      g.assign(t.grad().begin(), t.grad().end());
    } else {
      g.assign(t.numel(), 0.0);
    }
  }
  return out;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
