#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treeformer/chart.hpp"
#include "treeformer/config.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

class ParamStore;

struct OpCounters {
  std::uint64_t compositions = 0;
  std::uint64_t pooling_candidate_total = 0;
  std::uint64_t cells_written = 0;
  std::uint64_t level_steps = 0;

  void reset() { *this = OpCounters{}; }
  OpCounters& operator+=(const OpCounters& other);
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

struct TreeformerParams {
  Tensor W;  // [d x 2d] composition
  Tensor b;  // [d] composition bias, undefined when disabled
  Tensor w;  // [d] pooling target
  Tensor Q;  // [d x d]
  Tensor K;  // [d x d]

  static TreeformerParams init(const TreeformerConfig& config, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct EncodeOptions {
  bool training = false;
  Rng* rng = nullptr;              // required when training with dropout
  OpCounters* counters = nullptr;  // reset at entry, filled during the pass
  bool record_weights = false;     // keep per-cell split weights in the chart
};

// W [l ; r] (+ b). Operates row-wise: left and right are [rows x d].
Tensor compose(const Tensor& left, const Tensor& right, const TreeformerParams& params,
               const TreeformerConfig& config);

// The per-candidate score vector u = Q^T (K w) / sqrt(d), so that the pooling
// score of candidate c is c . u = (Q c) . (K w) / sqrt(d).
Tensor pooling_query(const TreeformerParams& params, const TreeformerConfig& config);

// Attention-weighted average of candidate rows [k x d] -> [1 x d]. When
// `weights` is given it receives the softmax weights.
Tensor pool(const Tensor& candidates, const TreeformerParams& params,
            const TreeformerConfig& config, std::vector<Real>* weights = nullptr);

// Reference schedule: spans in ascending length, then ascending start, each
// cell composed split by split and pooled on its own. `tokens` is [n x d].
SpanChart encode_sequential(const Tensor& tokens, const TreeformerConfig& config,
                            const TreeformerParams& params, const EncodeOptions& options = {});

// Level-parallel schedule over a packed batch: `tokens` holds the token rows
// of every sequence back to back and `offsets` delimits them. Each length
// level is computed as one batched compose + pool across all sequences.
std::vector<SpanChart> encode_levelwise(const Tensor& tokens, std::span<const std::size_t> offsets,
                                        const TreeformerConfig& config,
                                        const TreeformerParams& params,
                                        const EncodeOptions& options = {});
std::vector<SpanChart> encode_levelwise(std::span<const Tensor> sequences,
                                        const TreeformerConfig& config,
                                        const TreeformerParams& params,
                                        const EncodeOptions& options = {});

// Mean of the cells at the top materialised length, as a [1 x d] tensor.
Tensor top_level_summary(const SpanChart& chart);
// One summary row per chart, [charts x d].
Tensor top_level_summaries(std::span<const SpanChart> charts);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
