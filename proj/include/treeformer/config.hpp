#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "treeformer/common.hpp"

// Plain configuration records shared by both precisions.
namespace treeformer {

enum class OptimizerKind { sgd, adam };
enum class LrSchedule { constant, inverse_sqrt };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to every parameter
  LrSchedule schedule = LrSchedule::inverse_sqrt;
  std::size_t warmup_steps = 500;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

OptimizerKind parse_optimizer_kind(const std::string& name);
LrSchedule parse_lr_schedule(const std::string& name);
std::string to_string(OptimizerKind kind);
std::string to_string(LrSchedule schedule);

// Learning rate for 1-based step `step`. The inverse-sqrt schedule warms up
// linearly to `lr` and then decays as lr * sqrt(warmup / step).
double scheduled_lr(const OptimizerConfig& config, std::size_t step);

struct TreeformerConfig {
  std::size_t dim = 64;
  std::size_t max_height = 6;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  bool composition_bias = true;
  // When false the pooling projections are pinned to the identity.
  bool learned_qk = true;
  bool compose_tanh = false;

  void validate() const;
};

struct PreEncoderConfig {
  std::size_t vocab_size = 7;
  std::size_t dim = 64;
  std::size_t layers = 1;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  double dropout = 0.0;
  bool positional = true;

  void validate() const;
};

struct DecoderConfig {
  std::size_t vocab_size = 7;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  double dropout = 0.0;
  std::size_t max_output_length = 32;  // generated tokens, eos included
  std::size_t beam_size = 1;
  double length_penalty = 0.0;
  bool positional = true;

  void validate() const;
};

}  // namespace treeformer
