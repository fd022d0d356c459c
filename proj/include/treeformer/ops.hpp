#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "treeformer/tensor.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x * weight^T (+ bias). x is [... x in], weight is [out x in], bias is [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
// Adds a [cols] vector to every row.
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor reshape(const Tensor& x, Shape shape);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

struct RowRef {
  Tensor tensor;
  std::size_t row = 0;
};
// Stacks the referenced rows; gradients scatter back to their sources.
Tensor gather_rows(std::span<const RowRef> refs);
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

Tensor softmax_last(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));
Tensor dropout(const Tensor& x, Real rate, Rng& rng);

// Segment ops work on rows grouped by `offsets` (size segments + 1,
// offsets.front() == 0, offsets.back() == rows).
Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> offsets);
Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> offsets);
Tensor segment_mean(const Tensor& values, std::span<const std::size_t> offsets);

struct AttentionSpec {
  std::size_t heads = 1;
  std::span<const std::size_t> query_offsets;
  std::span<const std::size_t> key_offsets;
  bool causal = false;
};
// Multi-head scaled dot-product attention over packed, unpadded sequences:
// query rows of segment s attend to key rows of segment s only. Head h uses
// columns [h*dh, (h+1)*dh). When `probabilities` is given it receives the
// attention rows, head-major within each segment.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                 std::vector<Real>* probabilities = nullptr);

// Mean label-smoothed negative log-likelihood over rows:
// (1 - eps) * nll(target) + eps * mean_v(-log p_v).
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     Real label_smoothing = Real(0.1));

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Test-only fault injection used by mutation tests of the gradient checker.
enum class Fault {
  none,
  flip_concat_grad,  // negates the gradient routed to the left operand of concat_last
};
void set_fault(Fault fault) noexcept;
Fault current_fault() noexcept;

class FaultScope {
 public:
  explicit FaultScope(Fault fault) : previous_(current_fault()) { set_fault(fault); }
  ~FaultScope() { set_fault(previous_); }
  FaultScope(const FaultScope&) = delete;
  FaultScope& operator=(const FaultScope&) = delete;

 private:
  Fault previous_;
};

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
