#include "treeformer/common.hpp"

namespace treeformer {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension:
      return "dimension";
    case ErrorKind::index:
      return "index";
    case ErrorKind::contract:
      return "contract";
    case ErrorKind::empty_input:
      return "empty-input";
    case ErrorKind::numeric:
      return "numeric";
    case ErrorKind::path:
      return "path";
    case ErrorKind::format:
      return "format";
    case ErrorKind::config:
      return "config";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace treeformer
