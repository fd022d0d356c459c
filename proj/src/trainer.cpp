#include "treeformer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "treeformer/optim.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

EvalResult evaluate(const Model& model, const std::vector<Example>& examples, std::size_t beam,
                    double length_penalty, std::size_t batch_size) {
  require(!examples.empty(), ErrorKind::empty_input, "evaluate: no examples");
  const bool classification = is_classification(model.config().task);
  BatchIterator it(examples, batch_size, false);
  Batch batch;
  EvalResult result;
  std::size_t correct = 0;
  std::size_t batches = 0;
  while (it.next(batch)) {
    result.loss += model.loss(batch).item();
    ++batches;
    if (classification) {
      const auto predicted = model.predict_classes(batch);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        correct += predicted[k] == batch.targets[k].front();
      }
    } else {
      const auto outputs = model.generate(batch, beam, length_penalty);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        correct += outputs[k] == target_payload(batch.targets[k]);
      }
    }
    result.count += batch.size();
  }
  result.loss /= static_cast<double>(batches);
  result.metric = static_cast<double>(correct) / static_cast<double>(result.count);
  return result;
}

std::string format_log_line(const TrainLogEntry& e) {
  char line[160];
  std::snprintf(line, sizeof line, "step=%zu train_loss=%.6f val_metric=%.6f lr=%.6g", e.step,
                e.train_loss, e.val_metric, e.lr);
  return line;
}

TrainResult train(Model& model, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid, const TrainOptions& options) {
  const RunConfig& config = model.config();
  require(!train_set.empty() && !valid.empty(), ErrorKind::empty_input,
          "train: training and validation sets must be non-empty");
  Optimizer optimizer(model.parameters(), config.optimizer_config());
  BatchIterator batches(train_set, config.batch_size, true, mix_seed(config.seed, 1));
  Rng dropout_rng(mix_seed(config.seed, 2));
  ForwardOptions forward;
  forward.training = true;
  forward.rng = &dropout_rng;

  TrainResult result;
  double loss_since_eval = 0;
  std::size_t steps_since_eval = 0;
  Batch batch;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (!batches.next(batch)) {
      batches.next(batch);
    }
    const double lr = optimizer.current_lr();
    double loss_value = 0;
    try {
      GradTape tape;
      const Tensor loss = model.loss(batch, forward);
      loss_value = step == options.nan_at_step ? std::numeric_limits<double>::quiet_NaN()
                                               : static_cast<double>(loss.item());
      require(std::isfinite(loss_value), ErrorKind::numeric,
              "non-finite loss at step " + std::to_string(step));
      tape.backward(loss);
      optimizer.step();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) {
        throw;
      }
      optimizer.zero_grad();
      result.diverged = true;
      if (options.log != nullptr) {
        *options.log << "diverged: " << e.what() << "\n";
      }
      break;
    }
    result.losses.push_back(loss_value);
    result.steps_completed = step;
    loss_since_eval += loss_value;
    ++steps_since_eval;

    if (step % config.eval_every == 0 || step == config.steps) {
      TrainLogEntry entry;
      entry.step = step;
      entry.train_loss = loss_since_eval / static_cast<double>(steps_since_eval);
      entry.val_metric = evaluate(model, valid, config.beam, config.length_penalty).metric;
      entry.lr = lr;
      loss_since_eval = 0;
      steps_since_eval = 0;
      result.evaluations.push_back(entry);
      if (options.log != nullptr) {
        *options.log << format_log_line(entry) << "\n" << std::flush;
      }
      if (entry.val_metric > result.best_metric) {
        result.best_metric = entry.val_metric;
        result.best_step = step;
        if (!options.checkpoint.empty()) {
          save_checkpoint(options.checkpoint, model.to_checkpoint(step, entry.val_metric));
        }
      }
    }
  }
  return result;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
