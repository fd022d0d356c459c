#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

// Build-wide precision switch. The default build uses 32-bit floats; the
// `treeformer_f64` library target defines TREEFORMER_REAL_DOUBLE for sharp
// finite-difference checks. Each precision lives in its own inline namespace
// so the two variants never share mangled names.
#if defined(TREEFORMER_REAL_DOUBLE) && TREEFORMER_REAL_DOUBLE
#define TREEFORMER_PRECISION_NS f64
#else
#define TREEFORMER_PRECISION_NS f32
#endif

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

#if defined(TREEFORMER_REAL_DOUBLE) && TREEFORMER_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace TREEFORMER_PRECISION_NS

// Everything below is precision-independent and lives in treeformer_base.

using TokenId = std::uint32_t;

// Reserved vocabulary ids shared by data files, models and checkpoints.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kFirstPayloadId = 3;

enum class ErrorKind {
  dimension,
  index,
  contract,
  empty_input,
  numeric,
  path,
  format,
  config,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) {
    fail(kind, message);
  }
}

// Thin wrapper over std::mt19937_64 used everywhere randomness enters:
// parameter init, dropout, data generation and shuffling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  void reseed(std::uint64_t seed) { engine_.seed(seed); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  // Uniform integer in [0, bound); bound must be positive.
  std::size_t below(std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent child seed (SplitMix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace treeformer
