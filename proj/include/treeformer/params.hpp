#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "treeformer/tensor.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// Named parameter registry. Entries share storage with the model's tensors,
// and iteration order is by name so serialisation is deterministic.
class ParamStore {
 public:
  void add(const std::string& name, const Tensor& tensor);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& entries() const noexcept { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t element_count() const;

 private:
  std::map<std::string, Tensor> entries_;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), marked as requiring gradients.
Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
