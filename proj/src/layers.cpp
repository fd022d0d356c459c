#include "treeformer/layers.hpp"

#include <cmath>

#include "treeformer/params.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

Tensor sinusoidal_positions(std::size_t count, std::size_t dim) {
  std::vector<Real> table(count * dim);
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double exponent = static_cast<double>(j - j % 2) / static_cast<double>(dim);
      const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      table[p * dim + j] = static_cast<Real>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor::from_data({count, dim}, std::move(table));
}

Tensor packed_positions(std::span<const std::size_t> offsets, std::size_t dim) {
  require(!offsets.empty(), ErrorKind::contract, "packed_positions: no offsets");
  std::size_t longest = 0;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    longest = std::max(longest, offsets[s + 1] - offsets[s]);
  }
  const Tensor table = sinusoidal_positions(longest, dim);
  std::vector<Real> out(offsets.back() * dim);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      const auto row = table.row(r - offsets[s]);
      std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(r * dim));
    }
  }
  return Tensor::from_data({offsets.back(), dim}, std::move(out));
}

LinearParams LinearParams::init(std::size_t in, std::size_t out, Rng& rng) {
  return {init_weight({out, in}, in, rng), init_zeros({out})};
}

void LinearParams::register_into(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + "weight", weight);
  store.add(prefix + "bias", bias);
}

NormParams NormParams::init(std::size_t dim) { return {init_ones({dim}), init_zeros({dim})}; }

void NormParams::register_into(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + "gain", gain);
  store.add(prefix + "shift", shift);
}

AttentionParams AttentionParams::init(std::size_t dim, Rng& rng) {
  AttentionParams p;
  p.query = LinearParams::init(dim, dim, rng);
  p.key = LinearParams::init(dim, dim, rng);
  p.value = LinearParams::init(dim, dim, rng);
  p.output = LinearParams::init(dim, dim, rng);
  return p;
}

void AttentionParams::register_into(ParamStore& store, const std::string& prefix) const {
  query.register_into(store, prefix + "query.");
  key.register_into(store, prefix + "key.");
  value.register_into(store, prefix + "value.");
  output.register_into(store, prefix + "output.");
}

FeedForwardParams FeedForwardParams::init(std::size_t dim, std::size_t ffn, Rng& rng) {
  return {LinearParams::init(dim, ffn, rng), LinearParams::init(ffn, dim, rng)};
}

void FeedForwardParams::register_into(ParamStore& store, const std::string& prefix) const {
  inner.register_into(store, prefix + "inner.");
  outer.register_into(store, prefix + "outer.");
}

Tensor multi_head_attention(const Tensor& x, const Tensor& memory, const AttentionParams& params,
                            const AttentionSpec& spec, std::vector<Real>* probabilities) {
  const Tensor attended =
      attention(params.query(x), params.key(memory), params.value(memory), spec, probabilities);
  return params.output(attended);
}

Tensor DropoutContext::operator()(const Tensor& x) const {
  if (!training || rate <= 0) {
    return x;
  }
  require(rng != nullptr, ErrorKind::contract, "training with dropout needs an rng");
  return dropout(x, static_cast<Real>(rate), *rng);
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
