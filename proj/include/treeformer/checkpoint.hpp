#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace treeformer {

inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'F', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

// Binary layout, all integers and floats little-endian:
//   magic "TRFMCKPT", u32 version, u32 pad/bos/eos ids,
//   u32 length + config text, u64 step, f64 validation metric,
//   u32 tensor count, then per tensor (sorted by name):
//   u32 length + name, u32 rank, u64 dims[rank], f32 values[prod(dims)].
struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  double metric = 0;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& tensor(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// Format errors for bad magic, a different version, reserved ids other than
// 0/1/2, or truncated data.
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Writes through a temporary file and a rename, so a crash never leaves a
// half-written checkpoint at `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace treeformer
