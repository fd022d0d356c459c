#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "treeformer/trainer.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

enum class SweepAxis { height, depth };

SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepRow {
  std::size_t value = 0;
  double metric = 0;  // best validation metric
  std::size_t best_step = 0;
  std::size_t steps = 0;
  std::filesystem::path checkpoint;
};

// Trains one model per value of `axis` with everything else taken from
// `base`, keeping each best checkpoint at `<out_dir>/<axis>_<value>.ckpt`.
// Divergence of any run is a numeric error.
std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis,
                                std::span<const std::size_t> values,
                                const std::vector<Example>& train_set,
                                const std::vector<Example>& valid,
                                const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// "<axis>,metric,best_step,steps,checkpoint" plus one line per row.
std::string format_sweep_csv(SweepAxis axis, std::span<const SweepRow> rows);

// Rise-then-plateau-or-dip: up to the first maximum no value falls more than
// `tolerance` below its predecessor, and the maximum is strictly above the
// first value. Anything after the maximum is by definition a plateau or dip.
bool sweep_shape_ok(std::span<const double> metrics, double tolerance = 0.02);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
