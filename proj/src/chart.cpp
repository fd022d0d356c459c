#include "treeformer/chart.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

std::vector<SplitPair> split_pairs(Span span) {
  require(span.i <= span.j, ErrorKind::contract, "split_pairs: span end precedes start");
  require(span.length() >= 2, ErrorKind::contract,
          "split_pairs: a length-1 span has no splits (base case)");
  std::vector<SplitPair> pairs;
  pairs.reserve(span.length() - 1);
  for (std::size_t k = span.i; k < span.j; ++k) {
    pairs.emplace_back(Span{span.i, k}, Span{k + 1, span.j});
  }
  return pairs;
}

std::uint64_t cell_count(std::size_t n, std::size_t max_height) {
  const std::size_t top = std::min(n, max_height);
  std::uint64_t total = 0;
  for (std::size_t h = 1; h <= top; ++h) {
    total += n - h + 1;
  }
  return total;
}

SpanChart::SpanChart(std::size_t n, std::size_t max_height, std::size_t dim)
    : n_(n), height_(std::min(max_height, n)), dim_(dim) {
  require(n >= 1, ErrorKind::empty_input, "chart over an empty sequence");
  require(max_height >= 1, ErrorKind::contract, "chart height must be at least 1");
  require(dim >= 1, ErrorKind::contract, "chart dimension must be at least 1");
  level_start_.assign(height_ + 2, 0);
  for (std::size_t h = 1; h <= height_; ++h) {
    level_start_[h + 1] = level_start_[h] + (n_ - h + 1);
  }
  const std::size_t cells = level_start_[height_ + 1];
  refs_.resize(cells);
  occupied_.assign(cells, 0);
  split_weights_.resize(cells);
}

void SpanChart::check_span(Span span) const {
  require(span.i <= span.j && span.j < n_, ErrorKind::index,
          "span (" + std::to_string(span.i) + "," + std::to_string(span.j) +
              ") outside a chart of length " + std::to_string(n_));
  require(span.length() <= height_, ErrorKind::index,
          "span of length " + std::to_string(span.length()) + " exceeds chart height " +
              std::to_string(height_));
}

std::vector<Span> SpanChart::cells_of_length(std::size_t length) const {
  require(length >= 1 && length <= height_, ErrorKind::contract,
          "cells_of_length: length " + std::to_string(length) + " outside [1, " +
              std::to_string(height_) + "]");
  std::vector<Span> spans;
  spans.reserve(n_ - length + 1);
  for (std::size_t i = 0; i + length <= n_; ++i) {
    spans.push_back({i, i + length - 1});
  }
  return spans;
}

std::size_t SpanChart::offset(Span span) const {
  check_span(span);
  return level_start_[span.length()] + span.i;
}

bool SpanChart::occupied(Span span) const { return occupied_[offset(span)] != 0; }

bool SpanChart::level_complete(std::size_t length) const {
  if (length == 0) {
    return true;
  }
  require(length <= height_, ErrorKind::contract, "level_complete: length above chart height");
  const auto begin = occupied_.begin() + static_cast<std::ptrdiff_t>(level_start_[length]);
  const auto end = occupied_.begin() + static_cast<std::ptrdiff_t>(level_start_[length + 1]);
  return std::all_of(begin, end, [](std::uint8_t f) { return f != 0; });
}

void SpanChart::write(Span span, const Tensor& source, std::size_t row) {
  const std::size_t at = offset(span);
  require(source.cols() == dim_, ErrorKind::dimension,
          "chart cell of width " + std::to_string(source.cols()) + " in a chart of dimension " +
              std::to_string(dim_));
  require(row < source.rows(), ErrorKind::index, "chart write: source row out of range");
  require(level_complete(span.length() - 1), ErrorKind::contract,
          "chart write out of order: length " + std::to_string(span.length()) +
              " before all shorter spans are filled");
  refs_[at] = RowRef{source, row};
  occupied_[at] = 1;
}

void SpanChart::write_level(std::size_t length, const Tensor& block, std::size_t first_row) {
  const auto spans = cells_of_length(length);
  require(first_row + spans.size() <= block.rows(), ErrorKind::index,
          "write_level: block too short for level " + std::to_string(length));
  for (std::size_t k = 0; k < spans.size(); ++k) {
    write(spans[k], block, first_row + k);
  }
}

const RowRef& SpanChart::cell(Span span) const {
  const std::size_t at = offset(span);
  require(occupied_[at] != 0, ErrorKind::contract,
          "chart cell (" + std::to_string(span.i) + "," + std::to_string(span.j) +
              ") read before it was written");
  return refs_[at];
}

std::span<const Real> SpanChart::value(Span span) const {
  const RowRef& ref = cell(span);
  return ref.tensor.row(ref.row);
}

void SpanChart::set_split_weights(Span span, std::vector<Real> weights) {
  const std::size_t at = offset(span);
  require(weights.size() + 1 == span.length(), ErrorKind::dimension,
          "split weights must have one entry per split");
  split_weights_[at] = std::move(weights);
}

std::span<const Real> SpanChart::split_weights(Span span) const {
  return split_weights_[offset(span)];
}

std::vector<Span> SpanChart::flatten_spans(LengthRange lengths) const {
  require(complete(), ErrorKind::contract, "flatten: chart is incomplete");
  std::vector<Span> spans;
  const std::size_t top = std::min(lengths.max, height_);
  for (std::size_t h = std::max<std::size_t>(lengths.min, 1); h <= top; ++h) {
    const auto level = cells_of_length(h);
    spans.insert(spans.end(), level.begin(), level.end());
  }
  return spans;
}

std::vector<FlatCell> SpanChart::flatten(LengthRange lengths) const {
  std::vector<FlatCell> cells;
  for (Span s : flatten_spans(lengths)) {
    cells.push_back({s, value(s)});
  }
  return cells;
}

Tensor SpanChart::flatten_tensor(LengthRange lengths) const {
  std::vector<RowRef> refs;
  for (Span s : flatten_spans(lengths)) {
    refs.push_back(cell(s));
  }
  return gather_rows(refs);
}

std::string SpanChart::render(int precision) const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision);
  for (std::size_t h = height_; h >= 1; --h) {
    out << "len " << std::setw(2) << h << " |";
    for (Span s : cells_of_length(h)) {
      out << " [" << s.i + 1 << "," << s.j + 1 << "]";
      if (!occupied(s)) {
        out << " ---";
      } else if (h > 1 && !split_weights(s).empty()) {
        const auto w = split_weights(s);
        const auto best = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        out << " k=" << s.i + best + 1 << ":" << w[best];
      }
      out << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
