#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "treeformer/checkpoint.hpp"
#include "treeformer/data.hpp"
#include "treeformer/decoder.hpp"
#include "treeformer/encoder.hpp"
#include "treeformer/params.hpp"
#include "treeformer/pre_encoder.hpp"
#include "treeformer/run_config.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout source, required when training with dropout
  bool record_weights = false;
};

// Token embedding and pre-encoder layers, the span chart on top, and either a
// classification head (dyck2) or a decoder (copy/reverse). Parameter names:
// "encoder.*", "treeformer.*", "classifier.*", "decoder.*".
class Model {
 public:
  explicit Model(const RunConfig& config);
  // Parameters are shared tensors, so copies would alias; only moves exist.
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const noexcept { return config_; }
  const ParamStore& params() const noexcept { return store_; }
  std::vector<Tensor> parameters() const { return store_.tensors(); }

  std::vector<SpanChart> encode(const Batch& batch, const ForwardOptions& options = {}) const;
  Tensor class_logits(const Batch& batch, const ForwardOptions& options = {}) const;
  // Label-smoothed training loss of the configured task.
  Tensor loss(const Batch& batch, const ForwardOptions& options = {}) const;

  std::vector<TokenId> predict_classes(const Batch& batch) const;
  // Outputs without bos/eos. Beam 1 with no length penalty uses greedy search.
  std::vector<std::vector<TokenId>> generate(const Batch& batch, std::size_t beam,
                                             double length_penalty) const;

  Checkpoint to_checkpoint(std::uint64_t step, double metric) const;
  // Rebuilds the model from the config echo and copies every tensor; names
  // and shapes must match exactly.
  static Model from_checkpoint(const Checkpoint& checkpoint);

  const PreEncoderParams& pre_encoder() const noexcept { return pre_; }
  const TreeformerParams& treeformer() const noexcept { return tree_; }
  const ClassifierParams& classifier() const noexcept { return classifier_; }
  const DecoderParams& decoder() const noexcept { return decoder_; }

 private:
  RunConfig config_;
  TreeformerConfig tree_config_;
  PreEncoderConfig pre_config_;
  DecoderConfig decoder_config_;
  PreEncoderParams pre_;
  TreeformerParams tree_;
  ClassifierParams classifier_;
  DecoderParams decoder_;
  ParamStore store_;
};

// Payload of a seq2seq target: the tokens between bos and eos.
std::vector<TokenId> target_payload(const std::vector<TokenId>& target);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
