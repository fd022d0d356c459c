#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treeformer/config.hpp"
#include "treeformer/layers.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

struct EncoderLayerParams {
  AttentionParams attention;
  NormParams norm1;
  FeedForwardParams ffn;
  NormParams norm2;

  static EncoderLayerParams init(const PreEncoderConfig& config, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct PreEncoderParams {
  Tensor embedding;  // [vocab x dim]
  std::vector<EncoderLayerParams> layers;

  static PreEncoderParams init(const PreEncoderConfig& config, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct PreEncodeOptions {
  bool training = false;
  Rng* rng = nullptr;
  // Receives the attention probabilities of every layer (layer-major).
  std::vector<std::vector<Real>>* attention = nullptr;
  // Receives the output of the embedding and of every layer.
  std::vector<Tensor>* trace = nullptr;
};

// Packed sequences: `ids` holds every sequence back to back, `offsets`
// delimits them. Results are [ids x dim].
Tensor embed(std::span<const TokenId> ids, std::span<const std::size_t> offsets,
             const PreEncoderConfig& config, const PreEncoderParams& params);

// Post-norm layer: x = norm1(x + attn(x)); x = norm2(x + ffn(x)).
Tensor self_attention_layer(const Tensor& x, std::span<const std::size_t> offsets,
                            const PreEncoderConfig& config, const EncoderLayerParams& params,
                            const PreEncodeOptions& options = {},
                            std::vector<Real>* probabilities = nullptr);

Tensor pre_encode(std::span<const TokenId> ids, std::span<const std::size_t> offsets,
                  const PreEncoderConfig& config, const PreEncoderParams& params,
                  const PreEncodeOptions& options = {});

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
