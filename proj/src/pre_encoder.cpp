#include "treeformer/pre_encoder.hpp"

#include "treeformer/params.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

EncoderLayerParams EncoderLayerParams::init(const PreEncoderConfig& config, Rng& rng) {
  EncoderLayerParams p;
  p.attention = AttentionParams::init(config.dim, rng);
  p.norm1 = NormParams::init(config.dim);
  p.ffn = FeedForwardParams::init(config.dim, config.ffn, rng);
  p.norm2 = NormParams::init(config.dim);
  return p;
}

void EncoderLayerParams::register_into(ParamStore& store, const std::string& prefix) const {
  attention.register_into(store, prefix + "attention.");
  norm1.register_into(store, prefix + "norm1.");
  ffn.register_into(store, prefix + "ffn.");
  norm2.register_into(store, prefix + "norm2.");
}

PreEncoderParams PreEncoderParams::init(const PreEncoderConfig& config, Rng& rng) {
  config.validate();
  PreEncoderParams p;
  // A lookup is a linear map from a one-hot vector, so its fan-in is 1.
  p.embedding = init_weight({config.vocab_size, config.dim}, 1, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.layers.push_back(EncoderLayerParams::init(config, rng));
  }
  return p;
}

void PreEncoderParams::register_into(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + "embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].register_into(store, prefix + "layer" + std::to_string(l) + ".");
  }
}

Tensor embed(std::span<const TokenId> ids, std::span<const std::size_t> offsets,
             const PreEncoderConfig& config, const PreEncoderParams& params) {
  require(!ids.empty(), ErrorKind::empty_input, "embed: empty input");
  require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == ids.size(),
          ErrorKind::contract, "embed: offsets do not cover the ids");
  const Tensor tokens = embedding(params.embedding, ids);
  if (!config.positional) {
    return tokens;
  }
  return add(tokens, packed_positions(offsets, config.dim));
}

Tensor self_attention_layer(const Tensor& x, std::span<const std::size_t> offsets,
                            const PreEncoderConfig& config, const EncoderLayerParams& params,
                            const PreEncodeOptions& options, std::vector<Real>* probabilities) {
  const DropoutContext drop{options.training, config.dropout, options.rng};
  AttentionSpec spec;
  spec.heads = config.heads;
  spec.query_offsets = offsets;
  spec.key_offsets = offsets;
  const Tensor attended = multi_head_attention(x, x, params.attention, spec, probabilities);
  const Tensor h = params.norm1(add(x, drop(attended)));
  return params.norm2(add(h, drop(params.ffn(h))));
}

Tensor pre_encode(std::span<const TokenId> ids, std::span<const std::size_t> offsets,
                  const PreEncoderConfig& config, const PreEncoderParams& params,
                  const PreEncodeOptions& options) {
  const DropoutContext drop{options.training, config.dropout, options.rng};
  Tensor x = drop(embed(ids, offsets, config, params));
  if (options.trace != nullptr) {
    options.trace->push_back(x);
  }
  for (const EncoderLayerParams& layer : params.layers) {
    std::vector<Real> probs;
    x = self_attention_layer(x, offsets, config, layer, options,
                             options.attention != nullptr ? &probs : nullptr);
    if (options.attention != nullptr) {
      options.attention->push_back(std::move(probs));
    }
    if (options.trace != nullptr) {
      options.trace->push_back(x);
    }
  }
  return x;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
