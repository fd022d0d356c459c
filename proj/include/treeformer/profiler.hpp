#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treeformer/encoder.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

// Total split compositions of a full chart over n tokens:
// sum over h of (n - h + 1)(h - 1). Requires n >= 1.
std::uint64_t compositions_closed_form(std::size_t n);
// The same sum truncated at height H, 1 <= H <= n.
std::uint64_t compositions_height_limited(std::size_t n, std::size_t H);
// Counts (span, split) pairs by enumerating split_pairs over every span of
// length 2..H.
std::uint64_t compositions_brute_force(std::size_t n, std::size_t H);

struct ParallelWork {
  std::vector<std::uint64_t> per_level;  // level h (index h - 1) contributes h - 1
  std::uint64_t total = 0;               // n(n - 1) / 2
};
// Critical-path accounting when every level runs fully in parallel.
ParallelWork parallel_work_per_level(std::size_t n);

struct ProfilePoint {
  std::size_t n = 1;
  std::size_t H = 1;
};

struct ProfileOptions {
  std::size_t dim = 32;
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 1;
  bool time = true;  // skip the timed repetitions when false
};

struct ProfileRow {
  std::size_t n = 0;
  std::size_t H = 0;  // effective height min(H, n)
  std::uint64_t compositions = 0;
  std::uint64_t pool_candidates = 0;
  std::uint64_t cells = 0;
  std::uint64_t level_steps = 0;
  double wall_ms = 0;  // median over the timed repetitions
  std::uint64_t chart_bytes = 0;
};

// Encodes one random sequence per point with the level-parallel encoder.
// The instrumented counters must equal the closed forms exactly; a mismatch
// throws a contract error. Timed repetitions run with instrumentation off.
std::vector<ProfileRow> profile_run(std::span<const ProfilePoint> points,
                                    const ProfileOptions& options = {});

inline constexpr const char* kProfileCsvHeader =
    "n,H,compositions,pool_candidates,cells,level_steps,wall_ms,chart_bytes";
std::string format_profile_csv(std::span<const ProfileRow> rows);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
