#include "treeformer/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "treeformer/encoder.hpp"
#include "treeformer/params.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

EncoderMemory build_memory(std::span<const SpanChart> charts) {
  require(!charts.empty(), ErrorKind::empty_input, "build_memory: no charts");
  EncoderMemory memory;
  memory.offsets.push_back(0);
  std::vector<RowRef> refs;
  for (const SpanChart& chart : charts) {
    require(chart.complete(), ErrorKind::contract, "build_memory: chart is incomplete");
    std::vector<Span> spans = chart.flatten_spans();
    for (Span s : spans) {
      refs.push_back(chart.cell(s));
    }
    memory.offsets.push_back(refs.size());
    memory.spans.push_back(std::move(spans));
  }
  memory.cells = gather_rows(refs);
  return memory;
}

DecoderLayerParams DecoderLayerParams::init(const DecoderConfig& config, Rng& rng) {
  DecoderLayerParams p;
  p.self_attention = AttentionParams::init(config.dim, rng);
  p.norm1 = NormParams::init(config.dim);
  p.cross_attention = AttentionParams::init(config.dim, rng);
  p.norm2 = NormParams::init(config.dim);
  p.ffn = FeedForwardParams::init(config.dim, config.ffn, rng);
  p.norm3 = NormParams::init(config.dim);
  return p;
}

void DecoderLayerParams::register_into(ParamStore& store, const std::string& prefix) const {
  self_attention.register_into(store, prefix + "self_attention.");
  norm1.register_into(store, prefix + "norm1.");
  cross_attention.register_into(store, prefix + "cross_attention.");
  norm2.register_into(store, prefix + "norm2.");
  ffn.register_into(store, prefix + "ffn.");
  norm3.register_into(store, prefix + "norm3.");
}

DecoderParams DecoderParams::init(const DecoderConfig& config, Rng& rng) {
  config.validate();
  DecoderParams p;
  p.embedding = init_weight({config.vocab_size, config.dim}, 1, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.layers.push_back(DecoderLayerParams::init(config, rng));
  }
  p.output = LinearParams::init(config.dim, config.vocab_size, rng);
  return p;
}

void DecoderParams::register_into(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + "embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].register_into(store, prefix + "layer" + std::to_string(l) + ".");
  }
  output.register_into(store, prefix + "output.");
}

namespace {

void check_offsets(std::span<const std::size_t> offsets, std::size_t rows, std::size_t batch,
                   const char* what) {
  require(offsets.size() == batch + 1 && offsets.front() == 0 && offsets.back() == rows,
          ErrorKind::contract, std::string(what) + ": offsets do not match the memory batch");
  for (std::size_t s = 0; s < batch; ++s) {
    require(offsets[s + 1] > offsets[s], ErrorKind::contract,
            std::string(what) + ": empty decoder sequence");
  }
}

// Shared decoder stack. Cross-attention keys and values are already
// projected, one tensor per layer, segmented by `key_offsets`.
Tensor decoder_hidden(std::span<const TokenId> inputs, std::span<const std::size_t> input_offsets,
                      std::span<const Tensor> keys, std::span<const Tensor> values,
                      std::span<const std::size_t> key_offsets, const DecoderConfig& config,
                      const DecoderParams& params, const DecodeOptions& options) {
  for (TokenId id : inputs) {
    require(id < config.vocab_size, ErrorKind::index, "decoder: token id outside the vocabulary");
  }
  const DropoutContext drop{options.training, config.dropout, options.rng};
  Tensor x = embedding(params.embedding, inputs);
  if (config.positional) {
    x = add(x, packed_positions(input_offsets, config.dim));
  }
  x = drop(x);

  AttentionSpec self_spec;
  self_spec.heads = config.heads;
  self_spec.query_offsets = input_offsets;
  self_spec.key_offsets = input_offsets;
  self_spec.causal = true;
  AttentionSpec cross_spec;
  cross_spec.heads = config.heads;
  cross_spec.query_offsets = input_offsets;
  cross_spec.key_offsets = key_offsets;

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DecoderLayerParams& layer = params.layers[l];
    x = layer.norm1(add(x, drop(multi_head_attention(x, x, layer.self_attention, self_spec))));
    const AttentionParams& cross = layer.cross_attention;
    const Tensor attended = cross.output(attention(cross.query(x), keys[l], values[l], cross_spec));
    x = layer.norm2(add(x, drop(attended)));
    x = layer.norm3(add(x, drop(layer.ffn(x))));
  }
  return x;
}

void project_memory(const Tensor& cells, const DecoderParams& params, std::vector<Tensor>& keys,
                    std::vector<Tensor>& values) {
  keys.clear();
  values.clear();
  for (const DecoderLayerParams& layer : params.layers) {
    keys.push_back(layer.cross_attention.key(cells));
    values.push_back(layer.cross_attention.value(cells));
  }
}

}  // namespace

Tensor decoder_logits(const EncoderMemory& memory, std::span<const TokenId> inputs,
                      std::span<const std::size_t> input_offsets, const DecoderConfig& config,
                      const DecoderParams& params, const DecodeOptions& options) {
  require(memory.batch() > 0, ErrorKind::empty_input, "decoder_logits: empty memory");
  check_offsets(input_offsets, inputs.size(), memory.batch(), "decoder_logits");
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  project_memory(memory.cells, params, keys, values);
  const Tensor hidden = decoder_hidden(inputs, input_offsets, keys, values, memory.offsets, config,
                                       params, options);
  return params.output(hidden);
}

Tensor decode_loss(const EncoderMemory& memory, std::span<const TokenId> targets,
                   std::span<const std::size_t> target_offsets, const DecoderConfig& config,
                   const DecoderParams& params, double label_smoothing,
                   const DecodeOptions& options) {
  check_offsets(target_offsets, targets.size(), memory.batch(), "decode_loss");
  std::vector<TokenId> inputs;
  inputs.reserve(targets.size());
  for (std::size_t s = 0; s + 1 < target_offsets.size(); ++s) {
    const std::size_t length = target_offsets[s + 1] - target_offsets[s];
    require(length <= config.max_output_length, ErrorKind::contract,
            "decode_loss: target of " + std::to_string(length) +
                " tokens exceeds max_output_length " + std::to_string(config.max_output_length));
    inputs.push_back(kBosId);
    for (std::size_t t = target_offsets[s]; t + 1 < target_offsets[s + 1]; ++t) {
      inputs.push_back(targets[t]);
    }
  }
  const Tensor logits = decoder_logits(memory, inputs, target_offsets, config, params, options);
  return cross_entropy(logits, targets, static_cast<Real>(label_smoothing));
}

DecoderSession::DecoderSession(const EncoderMemory& memory, const DecoderConfig& config,
                               const DecoderParams& params)
    : memory_(memory), config_(config), params_(params) {
  require(memory.batch() > 0, ErrorKind::empty_input, "DecoderSession: empty memory");
  project_memory(memory.cells, params, keys_, values_);
}

std::vector<std::vector<double>> DecoderSession::log_probs(
    const std::vector<std::vector<TokenId>>& prefixes, std::span<const std::size_t> sources) const {
  require(prefixes.size() == sources.size(), ErrorKind::contract,
          "log_probs: one source per prefix");
  if (prefixes.empty()) {
    return {};
  }
  std::vector<TokenId> inputs;
  std::vector<std::size_t> input_offsets{0};
  std::vector<std::size_t> key_offsets{0};
  std::vector<std::size_t> key_rows;
  for (std::size_t k = 0; k < prefixes.size(); ++k) {
    require(sources[k] < memory_.batch(), ErrorKind::index, "log_probs: source out of range");
    inputs.push_back(kBosId);
    inputs.insert(inputs.end(), prefixes[k].begin(), prefixes[k].end());
    input_offsets.push_back(inputs.size());
    for (std::size_t r = memory_.offsets[sources[k]]; r < memory_.offsets[sources[k] + 1]; ++r) {
      key_rows.push_back(r);
    }
    key_offsets.push_back(key_rows.size());
  }
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    std::vector<RowRef> key_refs;
    std::vector<RowRef> value_refs;
    for (std::size_t r : key_rows) {
      key_refs.push_back({keys_[l], r});
      value_refs.push_back({values_[l], r});
    }
    keys.push_back(gather_rows(key_refs));
    values.push_back(gather_rows(value_refs));
  }
  const Tensor hidden =
      decoder_hidden(inputs, input_offsets, keys, values, key_offsets, config_, params_, {});
  std::vector<RowRef> last;
  for (std::size_t k = 0; k < prefixes.size(); ++k) {
    last.push_back({hidden, input_offsets[k + 1] - 1});
  }
  const Tensor logits = params_.output(gather_rows(last));

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> out(prefixes.size());
  const std::size_t vocab = logits.cols();
  for (std::size_t k = 0; k < prefixes.size(); ++k) {
    const auto row = logits.row(k);
    double peak = kNegInf;
    for (std::size_t v = 0; v < vocab; ++v) {
      if (v != kPadId && v != kBosId) {
        peak = std::max(peak, static_cast<double>(row[v]));
      }
    }
    double total = 0;
    for (std::size_t v = 0; v < vocab; ++v) {
      if (v != kPadId && v != kBosId) {
        total += std::exp(static_cast<double>(row[v]) - peak);
      }
    }
    const double log_norm = peak + std::log(total);
    out[k].resize(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
      out[k][v] = (v == kPadId || v == kBosId) ? kNegInf : static_cast<double>(row[v]) - log_norm;
    }
  }
  return out;
}

StepScorer DecoderSession::scorer_for(std::size_t source) const {
  require(source < memory_.batch(), ErrorKind::index, "scorer_for: source out of range");
  return [this, source](const std::vector<std::vector<TokenId>>& prefixes) {
    const std::vector<std::size_t> sources(prefixes.size(), source);
    return log_probs(prefixes, sources);
  };
}

std::vector<std::vector<TokenId>> generate_greedy(const EncoderMemory& memory,
                                                  const DecoderConfig& config,
                                                  const DecoderParams& params) {
  config.validate();
  const DecoderSession session(memory, config, params);
  std::vector<std::vector<TokenId>> outputs(memory.batch());
  std::vector<std::size_t> live(memory.batch());
  for (std::size_t b = 0; b < live.size(); ++b) {
    live[b] = b;
  }
  for (std::size_t step = 0; step < config.max_output_length && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (std::size_t b : live) {
      prefixes.push_back(outputs[b]);
    }
    const auto scores = session.log_probs(prefixes, live);
    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto& row = scores[k];
      const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == kEosId) {
        continue;
      }
      outputs[live[k]].push_back(best);
      next.push_back(live[k]);
    }
    live = std::move(next);
  }
  return outputs;
}

namespace {

double length_normalised(double log_prob, std::size_t length, double penalty) {
  return log_prob / std::pow(static_cast<double>(length), penalty);
}

}  // namespace

BeamResult beam_search(const StepScorer& scorer, std::size_t beam_size, double length_penalty,
                       std::size_t max_length) {
  require(beam_size >= 1, ErrorKind::config, "beam_search: beam size must be at least 1");
  require(max_length >= 1, ErrorKind::config, "beam_search: max length must be at least 1");
  struct Candidate {
    std::size_t hyp;
    TokenId token;
    double log_prob;
  };

  BeamResult result;
  std::vector<Hypothesis> live(1);
  while (!live.empty() && result.finished.size() < beam_size) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const Hypothesis& h : live) {
      prefixes.push_back(h.tokens);
    }
    const auto scores = scorer(prefixes);
    require(scores.size() == live.size(), ErrorKind::contract,
            "beam_search: scorer returned the wrong number of rows");

    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < scores[h].size(); ++v) {
        if (std::isfinite(scores[h][v])) {
          candidates.push_back({h, static_cast<TokenId>(v), live[h].log_prob + scores[h][v]});
        }
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) {
        return a.log_prob > b.log_prob;
      }
      if (a.hyp != b.hyp) {
        return a.hyp < b.hyp;
      }
      return a.token < b.token;
    });

    std::vector<Hypothesis> next;
    std::size_t extended = 0;
    for (const Candidate& c : candidates) {
      if (extended == beam_size) {
        break;
      }
      Hypothesis h;
      h.tokens = live[c.hyp].tokens;
      h.log_prob = c.log_prob;
      if (c.token == kEosId) {
        h.ended = true;
        h.score = length_normalised(h.log_prob, h.tokens.size() + 1, length_penalty);
        result.finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      ++extended;
      if (h.tokens.size() >= max_length) {
        h.score = length_normalised(h.log_prob, h.tokens.size(), length_penalty);
        result.finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  require(!result.finished.empty(), ErrorKind::numeric, "beam_search: no hypothesis completed");
  const Hypothesis* best = &result.finished.front();
  for (const Hypothesis& h : result.finished) {
    if (h.score > best->score) {
      best = &h;
    }
  }
  result.best = *best;
  return result;
}

std::vector<BeamResult> generate_beam(const EncoderMemory& memory, const DecoderConfig& config,
                                      const DecoderParams& params, std::size_t beam_size,
                                      double length_penalty) {
  config.validate();
  const DecoderSession session(memory, config, params);
  std::vector<BeamResult> out;
  for (std::size_t b = 0; b < memory.batch(); ++b) {
    out.push_back(beam_search(session.scorer_for(b), beam_size, length_penalty,
                              config.max_output_length));
  }
  return out;
}

ClassifierParams ClassifierParams::init(std::size_t dim, std::size_t classes, Rng& rng) {
  require(dim > 0 && classes > 0, ErrorKind::config, "classifier: dim and classes must be positive");
  return {LinearParams::init(dim, classes, rng)};
}

void ClassifierParams::register_into(ParamStore& store, const std::string& prefix) const {
  head.register_into(store, prefix + "head.");
}

Tensor classify(std::span<const SpanChart> charts, const ClassifierParams& params,
                bool use_summary) {
  require(!charts.empty(), ErrorKind::empty_input, "classify: no charts");
  std::vector<RowRef> tokens;
  std::vector<std::size_t> offsets{0};
  for (const SpanChart& chart : charts) {
    require(chart.complete(), ErrorKind::contract, "classify: chart is incomplete");
    for (Span s : chart.cells_of_length(1)) {
      tokens.push_back(chart.cell(s));
    }
    offsets.push_back(tokens.size());
  }
  Tensor features = segment_mean(gather_rows(tokens), offsets);
  if (use_summary) {
    features = add(features, top_level_summaries(charts));
  }
  return params.head(features);
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
