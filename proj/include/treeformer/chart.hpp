#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "treeformer/ops.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// Contiguous token range [i, j], both ends inclusive and 0-based.
struct Span {
  std::size_t i = 0;
  std::size_t j = 0;

  std::size_t length() const noexcept { return j - i + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

using SplitPair = std::pair<Span, Span>;

// All (prefix, suffix) splits of `span` in ascending split point.
std::vector<SplitPair> split_pairs(Span span);

// Number of cells of a chart over n tokens truncated at height h_max.
std::uint64_t cell_count(std::size_t n, std::size_t max_height);

struct LengthRange {
  std::size_t min = 1;
  std::size_t max = SIZE_MAX;
};

struct FlatCell {
  Span span;
  std::span<const Real> vector;
};

// Triangular table of span representations, truncated at a maximum phrase
// length. Cells are addressed through a level-major arena: all spans of
// length 1, then length 2, and so on, each level in ascending start index.
// A cell stores a reference to a row of some tensor, so a whole level computed
// as one batched matrix is recorded without copying.
//
// Cells of length h can only be written once every cell of length h - 1 is
// occupied. Slots of one level may be written concurrently.
class SpanChart {
 public:
  // Heights above n are clamped to n.
  SpanChart(std::size_t n, std::size_t max_height, std::size_t dim);

  std::size_t size() const noexcept { return n_; }
  std::size_t max_height() const noexcept { return height_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t cell_count() const noexcept { return refs_.size(); }

  std::vector<Span> cells_of_length(std::size_t length) const;
  std::size_t offset(Span span) const;

  bool occupied(Span span) const;
  bool level_complete(std::size_t length) const;
  bool complete() const { return level_complete(height_); }

  void write(Span span, const Tensor& source, std::size_t row);
  // Writes every span of `length` from consecutive rows of `block`.
  void write_level(std::size_t length, const Tensor& block, std::size_t first_row);

  const RowRef& cell(Span span) const;
  std::span<const Real> value(Span span) const;

  // Attention weights over the splits of a pooled cell, in split order.
  void set_split_weights(Span span, std::vector<Real> weights);
  std::span<const Real> split_weights(Span span) const;

  // Cells in chart order (length ascending, then start index) restricted to
  // `lengths`. Requires a complete chart.
  std::vector<FlatCell> flatten(LengthRange lengths = {}) const;
  std::vector<Span> flatten_spans(LengthRange lengths = {}) const;
  // The same cells stacked as a differentiable [cells x dim] tensor.
  Tensor flatten_tensor(LengthRange lengths = {}) const;

  // Bytes held by cell vectors (cells x dim x sizeof(Real)).
  std::size_t chart_bytes() const noexcept { return refs_.size() * dim_ * sizeof(Real); }

  // Text rendering: one line per length level, one column per start index.
  // Spans are printed 1-based.
  std::string render(int precision = 3) const;

 private:
  void check_span(Span span) const;

  std::size_t n_;
  std::size_t height_;
  std::size_t dim_;
  std::vector<std::size_t> level_start_;  // arena offset of each length, 1-based index
  std::vector<RowRef> refs_;
  std::vector<std::uint8_t> occupied_;
  std::vector<std::vector<Real>> split_weights_;
};

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
