#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "treeformer/config.hpp"
#include "treeformer/data.hpp"

namespace treeformer {

// Everything a run needs, read from flat `key = value` text. Lines starting
// with '#' and blank lines are ignored. Later assignments override earlier
// ones, so command-line overrides are applied with set() after parsing.
struct RunConfig {
  Task task = Task::dyck2;
  std::string data;  // directory holding train/valid/test .tsv
  std::string out;

  // model
  std::size_t vocab_size = kDyckVocabSize;
  std::size_t dim = 32;
  std::size_t height = 6;
  std::size_t depth = 1;  // pre-encoder layers
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  double dropout = 0.0;
  bool composition_bias = true;
  bool learned_qk = true;
  bool compose_tanh = false;
  bool use_summary = true;
  bool positional = true;
  std::size_t max_output_length = 32;

  // optimisation
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::inverse_sqrt;
  std::size_t warmup = 500;
  double clip_norm = 0.0;
  double label_smoothing = 0.1;
  std::size_t batch_size = 32;
  std::size_t steps = 10000;
  std::size_t eval_every = 500;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  // decoding
  std::size_t beam = 1;
  double length_penalty = 0.0;

  // data generation
  std::size_t min_length = 2;
  std::size_t max_length = 24;
  std::size_t train_count = 20000;
  std::size_t valid_count = 1000;
  std::size_t test_count = 1000;
  double corruption_rate = 0.5;
  std::uint64_t data_seed = 1;

  // Assigns one key from its text form; unknown keys and bad values are
  // config errors.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  // Canonical text: every key once, in declaration order.
  std::string to_text() const;

  void validate() const;

  TreeformerConfig treeformer_config() const;
  PreEncoderConfig pre_encoder_config() const;
  DecoderConfig decoder_config() const;
  OptimizerConfig optimizer_config() const;
  DatasetConfig dataset_config() const;
};

// "key=value" as given on the command line.
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace treeformer
