#include "treeformer/params.hpp"

#include <cmath>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

void ParamStore::add(const std::string& name, const Tensor& tensor) {
  require(tensor.defined(), ErrorKind::contract, "parameter '" + name + "' is undefined");
  const bool inserted = entries_.emplace(name, tensor).second;
  require(inserted, ErrorKind::contract, "duplicate parameter name '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = entries_.find(name);
  require(it != entries_.end(), ErrorKind::index, "no parameter named '" + name + "'");
  return it->second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) {
    out.push_back(t);
  }
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) {
    total += t.numel();
  }
  return total;
}

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), -bound, bound, rng);
  t.set_requires_grad(true);
  return t;
}

Tensor init_zeros(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor init_ones(Shape shape) {
  Tensor t = Tensor::full(std::move(shape), Real{1});
  t.set_requires_grad(true);
  return t;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
