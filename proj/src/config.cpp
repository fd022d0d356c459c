#include "treeformer/config.hpp"

#include <algorithm>
#include <cmath>

namespace treeformer {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") {
    return OptimizerKind::sgd;
  }
  if (name == "adam") {
    return OptimizerKind::adam;
  }
  fail(ErrorKind::config, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "constant") {
    return LrSchedule::constant;
  }
  if (name == "inverse_sqrt") {
    return LrSchedule::inverse_sqrt;
  }
  fail(ErrorKind::config, "unknown schedule '" + name + "' (expected constant or inverse_sqrt)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::constant ? "constant" : "inverse_sqrt";
}

double scheduled_lr(const OptimizerConfig& config, std::size_t step) {
  if (config.schedule == LrSchedule::constant || config.warmup_steps == 0) {
    return config.lr;
  }
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double warm = static_cast<double>(config.warmup_steps);
  return config.lr * std::min(s / warm, std::sqrt(warm / s));
}

void TreeformerConfig::validate() const {
  require(dim >= 1, ErrorKind::config, "treeformer dimension must be at least 1");
  require(max_height >= 1, ErrorKind::config, "maximum height must be at least 1");
  require(dropout >= 0 && dropout < 1, ErrorKind::config, "dropout must be in [0, 1)");
}

void PreEncoderConfig::validate() const {
  require(vocab_size > kFirstPayloadId, ErrorKind::config,
          "vocabulary must hold the reserved ids and at least one payload token");
  require(dim >= 1, ErrorKind::config, "model dimension must be at least 1");
  require(heads >= 1 && dim % heads == 0, ErrorKind::config,
          "dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
              " heads");
  require(ffn >= 1, ErrorKind::config, "feed-forward width must be at least 1");
  require(dropout >= 0 && dropout < 1, ErrorKind::config, "dropout must be in [0, 1)");
}

void DecoderConfig::validate() const {
  require(vocab_size > kFirstPayloadId, ErrorKind::config,
          "vocabulary must hold the reserved ids and at least one payload token");
  require(dim >= 1, ErrorKind::config, "model dimension must be at least 1");
  require(heads >= 1 && dim % heads == 0, ErrorKind::config,
          "dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
              " heads");
  require(ffn >= 1, ErrorKind::config, "feed-forward width must be at least 1");
  require(dropout >= 0 && dropout < 1, ErrorKind::config, "dropout must be in [0, 1)");
  require(max_output_length >= 1, ErrorKind::config, "max output length must be at least 1");
  require(beam_size >= 1, ErrorKind::config, "beam size must be at least 1");
  require(length_penalty >= 0, ErrorKind::config, "length penalty must be non-negative");
}

}  // namespace treeformer
