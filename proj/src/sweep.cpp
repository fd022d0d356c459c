#include "treeformer/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "height") {
    return SweepAxis::height;
  }
  if (name == "depth") {
    return SweepAxis::depth;
  }
  fail(ErrorKind::config, "unknown sweep axis '" + name + "' (expected height or depth)");
}

std::string to_string(SweepAxis axis) { return axis == SweepAxis::height ? "height" : "depth"; }

std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis,
                                std::span<const std::size_t> values,
                                const std::vector<Example>& train_set,
                                const std::vector<Example>& valid,
                                const std::filesystem::path& out_dir, std::ostream* log) {
  require(!values.empty(), ErrorKind::empty_input, "sweep: no values");
  require(std::filesystem::is_directory(out_dir), ErrorKind::path,
          "sweep: output directory '" + out_dir.string() + "' does not exist");
  std::vector<SweepRow> rows;
  for (std::size_t value : values) {
    RunConfig config = base;
    (axis == SweepAxis::height ? config.height : config.depth) = value;
    config.validate();
    SweepRow row;
    row.value = value;
    row.checkpoint = out_dir / (to_string(axis) + "_" + std::to_string(value) + ".ckpt");
    if (log != nullptr) {
      *log << "# " << to_string(axis) << "=" << value << "\n";
    }
    Model model(config);
    TrainOptions options;
    options.checkpoint = row.checkpoint;
    options.log = log;
    const TrainResult result = train(model, train_set, valid, options);
    require(!result.diverged, ErrorKind::numeric,
            "sweep: training diverged at " + to_string(axis) + "=" + std::to_string(value));
    row.metric = result.best_metric;
    row.best_step = result.best_step;
    row.steps = result.steps_completed;
    rows.push_back(row);
  }
  return rows;
}

std::string format_sweep_csv(SweepAxis axis, std::span<const SweepRow> rows) {
  std::string out = to_string(axis) + ",metric,best_step,steps,checkpoint\n";
  for (const SweepRow& row : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%.6f,%zu,%zu,", row.value, row.metric, row.best_step,
                  row.steps);
    out += line + row.checkpoint.string() + "\n";
  }
  return out;
}

bool sweep_shape_ok(std::span<const double> metrics, double tolerance) {
  if (metrics.size() < 2) {
    return false;
  }
  const auto peak = static_cast<std::size_t>(
      std::max_element(metrics.begin(), metrics.end()) - metrics.begin());
  for (std::size_t i = 1; i <= peak; ++i) {
    if (metrics[i] < metrics[i - 1] - tolerance) {
      return false;
    }
  }
  return metrics[peak] > metrics[0];
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
