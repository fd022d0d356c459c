#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "treeformer/chart.hpp"
#include "treeformer/config.hpp"
#include "treeformer/layers.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// Decoder cross-attention memory: the flattened chart cells of every
// sequence, token cells first and then phrases by ascending length.
struct EncoderMemory {
  Tensor cells;                          // [total cells x d]
  std::vector<std::size_t> offsets;      // per-sequence delimiters into cells
  std::vector<std::vector<Span>> spans;  // span of every row, per sequence

  std::size_t batch() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t length(std::size_t b) const { return offsets[b + 1] - offsets[b]; }
};

EncoderMemory build_memory(std::span<const SpanChart> charts);

struct DecoderLayerParams {
  AttentionParams self_attention;
  NormParams norm1;
  AttentionParams cross_attention;
  NormParams norm2;
  FeedForwardParams ffn;
  NormParams norm3;

  static DecoderLayerParams init(const DecoderConfig& config, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct DecoderParams {
  Tensor embedding;  // [vocab x dim]
  std::vector<DecoderLayerParams> layers;
  LinearParams output;  // [vocab x dim]

  static DecoderParams init(const DecoderConfig& config, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

struct DecodeOptions {
  bool training = false;
  Rng* rng = nullptr;
};

// Teacher-forced logits. `inputs` packs one decoder input sequence per memory
// sequence (each starting with bos); row t of a sequence predicts token t+1.
// Self-attention is causal. Returns [inputs x vocab].
Tensor decoder_logits(const EncoderMemory& memory, std::span<const TokenId> inputs,
                      std::span<const std::size_t> input_offsets, const DecoderConfig& config,
                      const DecoderParams& params, const DecodeOptions& options = {});

// Label-smoothed cross-entropy of producing `targets` (packed, bos excluded,
// normally ending with eos) from the memory. Each target must have between 1
// and max_output_length tokens.
Tensor decode_loss(const EncoderMemory& memory, std::span<const TokenId> targets,
                   std::span<const std::size_t> target_offsets, const DecoderConfig& config,
                   const DecoderParams& params, double label_smoothing,
                   const DecodeOptions& options = {});

// Log-probabilities of the next token for each prefix (generated tokens so
// far, bos excluded). Pad and bos are never proposed: their log-probability
// is -infinity.
using StepScorer =
    std::function<std::vector<std::vector<double>>(const std::vector<std::vector<TokenId>>& prefixes)>;

// Inference-time decoder bound to one memory. Cross-attention keys and values
// are projected once and reused at every step.
class DecoderSession {
 public:
  DecoderSession(const EncoderMemory& memory, const DecoderConfig& config, const DecoderParams& params);

  // Next-token log-probabilities; prefix k attends to memory sequence
  // `sources[k]`.
  std::vector<std::vector<double>> log_probs(const std::vector<std::vector<TokenId>>& prefixes,
                                             std::span<const std::size_t> sources) const;
  StepScorer scorer_for(std::size_t source) const;

 private:
  const EncoderMemory& memory_;
  const DecoderConfig& config_;
  const DecoderParams& params_;
  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
};

// Argmax decoding (lowest id on ties) until eos or max_output_length tokens,
// batched over every memory sequence. Results exclude eos.
std::vector<std::vector<TokenId>> generate_greedy(const EncoderMemory& memory,
                                                  const DecoderConfig& config,
                                                  const DecoderParams& params);

struct Hypothesis {
  std::vector<TokenId> tokens;  // eos excluded
  double log_prob = 0;
  double score = 0;  // log_prob / length^penalty, length counting eos when emitted
  bool ended = false;  // emitted eos (otherwise stopped at the length limit)
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> finished;  // every completed hypothesis, in completion order
};

// Length-normalised beam search. At each step the candidates of all live
// hypotheses are ranked by cumulative log-probability (ties: earlier
// hypothesis, then lower token id); eos candidates are completed and the
// others refill the beam up to `beam_size`. The search stops once
// `beam_size` hypotheses are complete or none are live; hypotheses reaching
// `max_length` tokens are completed as they are.
BeamResult beam_search(const StepScorer& scorer, std::size_t beam_size, double length_penalty,
                       std::size_t max_length);

std::vector<BeamResult> generate_beam(const EncoderMemory& memory, const DecoderConfig& config,
                                      const DecoderParams& params, std::size_t beam_size,
                                      double length_penalty);

struct ClassifierParams {
  LinearParams head;  // [classes x dim]

  static ClassifierParams init(std::size_t dim, std::size_t classes, Rng& rng);
  void register_into(ParamStore& store, const std::string& prefix) const;
};

// logits = head(mean of token cells + top-level summary); the summary term is
// dropped when `use_summary` is false. One row per chart.
Tensor classify(std::span<const SpanChart> charts, const ClassifierParams& params,
                bool use_summary = true);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
