#include "treeformer/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "treeformer/params.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

namespace {

Tensor maybe_dropout(const Tensor& x, const TreeformerConfig& config, const EncodeOptions& options) {
  if (!options.training || config.dropout <= 0) {
    return x;
  }
  require(options.rng != nullptr, ErrorKind::contract, "training with dropout needs an rng");
  return dropout(x, static_cast<Real>(config.dropout), *options.rng);
}

Tensor pool_with_query(const Tensor& candidates, const Tensor& query, std::vector<Real>* weights) {
  require(candidates.defined() && candidates.rows() >= 1 && candidates.numel() > 0,
          ErrorKind::contract, "pool: empty candidate list");
  const std::size_t offsets[] = {0, candidates.rows()};
  const Tensor scores = linear(candidates, query);
  const Tensor probs = segment_softmax(scores, offsets);
  if (weights != nullptr) {
    weights->assign(probs.data().begin(), probs.data().end());
  }
  return segment_weighted_sum(candidates, probs, offsets);
}

}  // namespace

OpCounters& OpCounters::operator+=(const OpCounters& other) {
  compositions += other.compositions;
  pooling_candidate_total += other.pooling_candidate_total;
  cells_written += other.cells_written;
  level_steps += other.level_steps;
  return *this;
}

TreeformerParams TreeformerParams::init(const TreeformerConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  TreeformerParams p;
  p.W = init_weight({d, 2 * d}, 2 * d, rng);
  if (config.composition_bias) {
    p.b = init_zeros({d});
  }
  p.w = init_weight({d}, d, rng);
  if (config.learned_qk) {
    p.Q = init_weight({d, d}, d, rng);
    p.K = init_weight({d, d}, d, rng);
  }
  return p;
}

void TreeformerParams::register_into(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + "W", W);
  if (b.defined()) {
    store.add(prefix + "b", b);
  }
  store.add(prefix + "w", w);
  if (Q.defined()) {
    store.add(prefix + "Q", Q);
    store.add(prefix + "K", K);
  }
}

Tensor compose(const Tensor& left, const Tensor& right, const TreeformerParams& params,
               const TreeformerConfig& config) {
  require(left.defined() && right.defined(), ErrorKind::contract, "compose: undefined input");
  require(left.cols() == config.dim && right.cols() == config.dim, ErrorKind::contract,
          "compose: inputs must have dimension " + std::to_string(config.dim) + ", got " +
              shape_string(left.shape()) + " and " + shape_string(right.shape()));
  require(left.rows() == right.rows(), ErrorKind::contract, "compose: row counts differ");
  Tensor out = linear(concat_last(left, right), params.W,
                      config.composition_bias ? params.b : Tensor{});
  return config.compose_tanh ? tanh(out) : out;
}

Tensor pooling_query(const TreeformerParams& params, const TreeformerConfig& config) {
  const std::size_t d = config.dim;
  const Real inv_sqrt_d = Real{1} / std::sqrt(static_cast<Real>(d));
  const Tensor target = reshape(params.w, {1, d});
  if (!config.learned_qk) {
    return scale(target, inv_sqrt_d);
  }
  const Tensor key = linear(target, params.K);  // (K w)^T
  return scale(matmul(key, params.Q), inv_sqrt_d);
}

Tensor pool(const Tensor& candidates, const TreeformerParams& params,
            const TreeformerConfig& config, std::vector<Real>* weights) {
  require(candidates.defined() && candidates.numel() > 0, ErrorKind::contract,
          "pool: empty candidate list");
  require(candidates.cols() == config.dim, ErrorKind::contract, "pool: candidate width mismatch");
  return pool_with_query(candidates, pooling_query(params, config), weights);
}

SpanChart encode_sequential(const Tensor& tokens, const TreeformerConfig& config,
                            const TreeformerParams& params, const EncodeOptions& options) {
  config.validate();
  require(tokens.defined() && tokens.rows() >= 1 && tokens.numel() > 0, ErrorKind::empty_input,
          "encode: empty token sequence");
  require(tokens.cols() == config.dim, ErrorKind::contract,
          "encode: token width does not match model dimension");
  const std::size_t n = tokens.rows();
  SpanChart chart(n, config.max_height, config.dim);
  OpCounters local;
  for (std::size_t i = 0; i < n; ++i) {
    chart.write({i, i}, tokens, i);
  }
  local.cells_written += n;
  if (chart.max_height() >= 2) {
    const Tensor query = pooling_query(params, config);
    for (std::size_t h = 2; h <= chart.max_height(); ++h) {
      ++local.level_steps;
      for (Span span : chart.cells_of_length(h)) {
        std::vector<Tensor> candidates;
        for (const auto& [prefix, suffix] : split_pairs(span)) {
          const RowRef left[] = {chart.cell(prefix)};
          const RowRef right[] = {chart.cell(suffix)};
          candidates.push_back(
              maybe_dropout(compose(gather_rows(left), gather_rows(right), params, config), config,
                            options));
          ++local.compositions;
        }
        std::vector<Real> weights;
        const Tensor cell = pool_with_query(concat_rows(candidates), query,
                                            options.record_weights ? &weights : nullptr);
        local.pooling_candidate_total += candidates.size();
        chart.write(span, cell, 0);
        ++local.cells_written;
        if (options.record_weights) {
          chart.set_split_weights(span, std::move(weights));
        }
      }
    }
  }
  if (options.counters != nullptr) {
    *options.counters = local;
  }
  return chart;
}

std::vector<SpanChart> encode_levelwise(const Tensor& tokens, std::span<const std::size_t> offsets,
                                        const TreeformerConfig& config,
                                        const TreeformerParams& params,
                                        const EncodeOptions& options) {
  config.validate();
  require(offsets.size() >= 2, ErrorKind::empty_input, "encode: empty batch");
  require(tokens.defined() && tokens.cols() == config.dim, ErrorKind::contract,
          "encode: token width does not match model dimension");
  require(offsets.front() == 0 && offsets.back() == tokens.rows(), ErrorKind::contract,
          "encode: offsets do not cover the token rows");
  const std::size_t batch = offsets.size() - 1;
  std::vector<SpanChart> charts;
  charts.reserve(batch);
  OpCounters local;
  std::size_t top = 1;
  for (std::size_t b = 0; b < batch; ++b) {
    require(offsets[b + 1] > offsets[b], ErrorKind::empty_input,
            "encode: sequence " + std::to_string(b) + " is empty");
    const std::size_t n = offsets[b + 1] - offsets[b];
    charts.emplace_back(n, config.max_height, config.dim);
    charts.back().write_level(1, tokens, offsets[b]);
    local.cells_written += n;
    top = std::max(top, charts.back().max_height());
  }

  Tensor query;
  if (top >= 2) {
    query = pooling_query(params, config);
  }
  for (std::size_t h = 2; h <= top; ++h) {
    std::vector<RowRef> left;
    std::vector<RowRef> right;
    std::vector<std::size_t> segments{0};
    std::vector<std::pair<std::size_t, std::size_t>> owners;  // (chart, first output row)
    for (std::size_t b = 0; b < batch; ++b) {
      SpanChart& chart = charts[b];
      if (h > chart.max_height()) {
        continue;
      }
      owners.emplace_back(b, segments.size() - 1);
      for (Span span : chart.cells_of_length(h)) {
        for (const auto& [prefix, suffix] : split_pairs(span)) {
          left.push_back(chart.cell(prefix));
          right.push_back(chart.cell(suffix));
        }
        segments.push_back(left.size());
      }
    }
    const Tensor candidates =
        maybe_dropout(compose(gather_rows(left), gather_rows(right), params, config), config, options);
    const Tensor probs = segment_softmax(linear(candidates, query), segments);
    const Tensor cells = segment_weighted_sum(candidates, probs, segments);
    for (const auto& [b, first] : owners) {
      charts[b].write_level(h, cells, first);
      if (options.record_weights) {
        const auto spans = charts[b].cells_of_length(h);
        for (std::size_t k = 0; k < spans.size(); ++k) {
          const std::size_t seg = first + k;
          const auto p = probs.data();
          charts[b].set_split_weights(
              spans[k], std::vector<Real>(p.begin() + static_cast<std::ptrdiff_t>(segments[seg]),
                                          p.begin() + static_cast<std::ptrdiff_t>(segments[seg + 1])));
        }
      }
    }
    local.compositions += candidates.rows();
    local.pooling_candidate_total += candidates.rows();
    local.cells_written += cells.rows();
    ++local.level_steps;
  }
  if (options.counters != nullptr) {
    *options.counters = local;
  }
  return charts;
}

std::vector<SpanChart> encode_levelwise(std::span<const Tensor> sequences,
                                        const TreeformerConfig& config,
                                        const TreeformerParams& params,
                                        const EncodeOptions& options) {
  require(!sequences.empty(), ErrorKind::empty_input, "encode: empty batch");
  std::vector<std::size_t> offsets{0};
  for (const Tensor& s : sequences) {
    require(s.defined() && s.rows() >= 1 && s.numel() > 0, ErrorKind::empty_input,
            "encode: empty token sequence");
    offsets.push_back(offsets.back() + s.rows());
  }
  return encode_levelwise(concat_rows(sequences), offsets, config, params, options);
}

Tensor top_level_summary(const SpanChart& chart) {
  const SpanChart* one = &chart;
  return top_level_summaries(std::span<const SpanChart>(one, 1));
}

Tensor top_level_summaries(std::span<const SpanChart> charts) {
  require(!charts.empty(), ErrorKind::empty_input, "top_level_summaries: no charts");
  std::vector<RowRef> refs;
  std::vector<std::size_t> offsets{0};
  for (const SpanChart& chart : charts) {
    require(chart.complete(), ErrorKind::contract, "top_level_summary: chart is incomplete");
    for (Span s : chart.cells_of_length(chart.max_height())) {
      refs.push_back(chart.cell(s));
    }
    offsets.push_back(refs.size());
  }
  return segment_mean(gather_rows(refs), offsets);
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
