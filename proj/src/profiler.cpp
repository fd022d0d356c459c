#include "treeformer/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "treeformer/chart.hpp"

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

std::uint64_t compositions_closed_form(std::size_t n) {
  require(n >= 1, ErrorKind::contract, "compositions_closed_form: n must be at least 1");
  return compositions_height_limited(n, n);
}

std::uint64_t compositions_height_limited(std::size_t n, std::size_t H) {
  require(H >= 1 && H <= n, ErrorKind::contract,
          "compositions_height_limited: need 1 <= H <= n");
  std::uint64_t total = 0;
  for (std::uint64_t h = 1; h <= H; ++h) {
    total += (n - h + 1) * (h - 1);
  }
  return total;
}

std::uint64_t compositions_brute_force(std::size_t n, std::size_t H) {
  require(H >= 1 && H <= n, ErrorKind::contract, "compositions_brute_force: need 1 <= H <= n");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n && j - i + 1 <= H; ++j) {
      total += split_pairs(Span{i, j}).size();
    }
  }
  return total;
}

ParallelWork parallel_work_per_level(std::size_t n) {
  require(n >= 1, ErrorKind::contract, "parallel_work_per_level: n must be at least 1");
  ParallelWork work;
  for (std::uint64_t h = 1; h <= n; ++h) {
    work.per_level.push_back(h - 1);
    work.total += h - 1;
  }
  return work;
}

std::vector<ProfileRow> profile_run(std::span<const ProfilePoint> points,
                                    const ProfileOptions& options) {
  require(!points.empty(), ErrorKind::empty_input, "profile_run: empty sweep");
  require(options.repetitions >= 1, ErrorKind::config, "profile_run: need at least one repetition");
  TreeformerConfig config;
  config.dim = options.dim;
  std::vector<ProfileRow> rows;
  for (const ProfilePoint& point : points) {
    require(point.n >= 1 && point.H >= 1, ErrorKind::config, "profile_run: n and H must be positive");
    const std::size_t H = std::min(point.H, point.n);
    config.max_height = H;
    Rng rng(mix_seed(options.seed, point.n * 1000 + H));
    const TreeformerParams params = TreeformerParams::init(config, rng);
    const Tensor tokens = Tensor::uniform({point.n, config.dim}, -1.0, 1.0, rng);
    const std::size_t offsets[] = {0, point.n};

    OpCounters counters;
    EncodeOptions instrumented;
    instrumented.counters = &counters;
    const std::vector<SpanChart> charts = encode_levelwise(tokens, offsets, config, params, instrumented);

    ProfileRow row;
    row.n = point.n;
    row.H = H;
    row.compositions = counters.compositions;
    row.pool_candidates = counters.pooling_candidate_total;
    row.cells = counters.cells_written;
    row.level_steps = counters.level_steps;
    row.chart_bytes = charts.front().chart_bytes();

    const std::uint64_t expected = compositions_height_limited(point.n, H);
    const auto check = [&](std::uint64_t got, std::uint64_t want, const char* what) {
      require(got == want, ErrorKind::contract,
              std::string("profile: ") + what + " counter " + std::to_string(got) +
                  " != closed form " + std::to_string(want) + " at n=" + std::to_string(point.n) +
                  ", H=" + std::to_string(H));
    };
    check(row.compositions, expected, "compositions");
    check(row.pool_candidates, expected, "pool_candidates");
    check(row.cells, cell_count(point.n, H), "cells");
    check(row.level_steps, H - 1, "level_steps");
    check(row.chart_bytes, cell_count(point.n, H) * config.dim * sizeof(Real), "chart_bytes");

    if (options.time) {
      std::vector<double> times;
      for (std::size_t r = 0; r < options.warmup + options.repetitions; ++r) {
        const auto start = std::chrono::steady_clock::now();
        const auto timed = encode_levelwise(tokens, offsets, config, params);
        const auto stop = std::chrono::steady_clock::now();
        if (r >= options.warmup) {
          times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        }
      }
      std::sort(times.begin(), times.end());
      const std::size_t m = times.size();
      row.wall_ms = m % 2 == 1 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_profile_csv(std::span<const ProfileRow> rows) {
  std::string out = std::string(kProfileCsvHeader) + "\n";
  char ms[32];
  for (const ProfileRow& r : rows) {
    std::snprintf(ms, sizeof ms, "%.4f", r.wall_ms);
    out += std::to_string(r.n) + "," + std::to_string(r.H) + "," + std::to_string(r.compositions) +
           "," + std::to_string(r.pool_candidates) + "," + std::to_string(r.cells) + "," +
           std::to_string(r.level_steps) + "," + ms + "," + std::to_string(r.chart_bytes) + "\n";
  }
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::contract,
          "loglog_slope: need at least two paired points");
  double mx = 0;
  double my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, ErrorKind::numeric, "loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0;
  double sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  require(sxx > 0, ErrorKind::numeric, "loglog_slope: x values are all equal");
  return sxy / sxx;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
