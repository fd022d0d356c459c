#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "treeformer/ops.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

class ParamStore;

// Sinusoidal position table [count x dim]:
// PE(p, 2i) = sin(p / 10000^(2i/dim)), PE(p, 2i+1) = cos(p / 10000^(2i/dim)).
Tensor sinusoidal_positions(std::size_t count, std::size_t dim);
// Position rows for packed sequences: row r gets the encoding of its index
// within its own segment.
Tensor packed_positions(std::span<const std::size_t> offsets, std::size_t dim);

struct LinearParams {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct NormParams {
  Tensor gain;
  Tensor shift;

  static NormParams init(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;

  static AttentionParams init(std::size_t dim, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct FeedForwardParams {
  LinearParams inner;  // [ffn x dim]
  LinearParams outer;  // [dim x ffn]

  static FeedForwardParams init(std::size_t dim, std::size_t ffn, Rng& rng);
  Tensor operator()(const Tensor& x) const { return outer(relu(inner(x))); }
  void register_into(ParamStore& store, const std::string& prefix) const;
};

// Projects queries from `x` and keys/values from `memory`, attends within
// segments and applies the output projection.
Tensor multi_head_attention(const Tensor& x, const Tensor& memory, const AttentionParams& params,
                            const AttentionSpec& spec, std::vector<Real>* probabilities = nullptr);

struct DropoutContext {
  bool training = false;
  double rate = 0.0;
  Rng* rng = nullptr;

  Tensor operator()(const Tensor& x) const;
};

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
