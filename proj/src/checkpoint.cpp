#include "treeformer/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "treeformer/common.hpp"

namespace treeformer {

namespace {

template <class T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bits.begin(), bits.end());
  }
  out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

void put_string(std::string& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::array<unsigned char, sizeof(T)> bits;
    std::memcpy(bits.data(), bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bits.begin(), bits.end());
    }
    return std::bit_cast<T>(bits);
  }

  std::string get_string() {
    const auto size = get<std::uint32_t>();
    need(size);
    std::string s = bytes_.substr(pos_, size);
    pos_ += size;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(bytes_.size() - pos_ >= n, ErrorKind::format, "checkpoint: truncated data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointTensor& Checkpoint::tensor(const std::string& name) const {
  for (const CheckpointTensor& t : tensors) {
    if (t.name == name) {
      return t;
    }
  }
  fail(ErrorKind::format, "checkpoint has no tensor '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::vector<const CheckpointTensor*> sorted;
  for (const CheckpointTensor& t : checkpoint.tensors) {
    sorted.push_back(&t);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const CheckpointTensor* a, const CheckpointTensor* b) { return a->name < b->name; });

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(kPadId));
  put(out, static_cast<std::uint32_t>(kBosId));
  put(out, static_cast<std::uint32_t>(kEosId));
  put_string(out, checkpoint.config_text);
  put(out, checkpoint.step);
  put(out, checkpoint.metric);
  put(out, static_cast<std::uint32_t>(sorted.size()));
  for (const CheckpointTensor* t : sorted) {
    std::uint64_t count = 1;
    for (std::uint64_t d : t->shape) {
      count *= d;
    }
    require(count == t->values.size(), ErrorKind::dimension,
            "checkpoint tensor " + t->name + ": shape does not match its values");
    put_string(out, t->name);
    put(out, static_cast<std::uint32_t>(t->shape.size()));
    for (std::uint64_t d : t->shape) {
      put(out, d);
    }
    for (float v : t->values) {
      put(out, v);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= sizeof kCheckpointMagic &&
              std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) == 0,
          ErrorKind::format, "not a checkpoint (bad magic)");
  const std::string body = bytes.substr(sizeof kCheckpointMagic);
  Reader in(body);
  const auto version = in.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::format,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto pad = in.get<std::uint32_t>();
  const auto bos = in.get<std::uint32_t>();
  const auto eos = in.get<std::uint32_t>();
  require(pad == kPadId && bos == kBosId && eos == kEosId, ErrorKind::format,
          "checkpoint uses reserved ids " + std::to_string(pad) + "/" + std::to_string(bos) + "/" +
              std::to_string(eos) + ", expected 0/1/2");
  Checkpoint c;
  c.config_text = in.get_string();
  c.step = in.get<std::uint64_t>();
  c.metric = in.get<double>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointTensor t;
    t.name = in.get_string();
    const auto rank = in.get<std::uint32_t>();
    require(rank <= 8, ErrorKind::format, "checkpoint tensor " + t.name + ": bad rank");
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(in.get<std::uint64_t>());
      elements *= t.shape.back();
    }
    require(elements <= body.size() / sizeof(float), ErrorKind::format,
            "checkpoint tensor " + t.name + ": truncated data");
    t.values.resize(elements);
    for (float& v : t.values) {
      v = in.get<float>();
    }
    require(c.tensors.empty() || c.tensors.back().name < t.name, ErrorKind::format,
            "checkpoint tensors are not sorted by name");
    c.tensors.push_back(std::move(t));
  }
  require(in.done(), ErrorKind::format, "checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::path, "cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::path, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::path, "cannot read checkpoint " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return deserialize_checkpoint(bytes.str());
}

}  // namespace treeformer
