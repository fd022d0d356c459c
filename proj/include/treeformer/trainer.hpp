#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "treeformer/model.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

struct EvalResult {
  double metric = 0;  // accuracy (dyck2) or exact-sequence match (copy/reverse)
  double loss = 0;    // mean teacher-forced loss per batch
  std::size_t count = 0;
};

// Unshuffled pass over `examples`. Seq2seq outputs use beam search when
// beam > 1 or the length penalty is non-zero, greedy decoding otherwise.
EvalResult evaluate(const Model& model, const std::vector<Example>& examples, std::size_t beam,
                    double length_penalty, std::size_t batch_size = 64);

struct TrainLogEntry {
  std::size_t step = 0;
  double train_loss = 0;  // mean over the steps since the previous evaluation
  double val_metric = 0;
  double lr = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // best-by-validation checkpoint; empty disables saving
  std::ostream* log = nullptr;       // one line per evaluation
  std::size_t nan_at_step = 0;       // test hook: replaces that step's loss by NaN
};

struct TrainResult {
  std::vector<double> losses;  // training loss of every completed step
  std::vector<TrainLogEntry> evaluations;
  std::size_t best_step = 0;
  double best_metric = -1;
  std::size_t steps_completed = 0;
  bool diverged = false;
};

// Runs config.steps optimiser steps on shuffled batches, evaluating on
// `valid` every eval_every steps and after the last step. The best
// validation metric (ties keep the earlier step) is saved to
// options.checkpoint. A non-finite loss or gradient stops training with
// diverged = true; the checkpoint on disk is left untouched.
TrainResult train(Model& model, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid, const TrainOptions& options = {});

std::string format_log_line(const TrainLogEntry& entry);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
