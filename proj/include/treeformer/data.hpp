#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "treeformer/common.hpp"

namespace treeformer {

// Dyck-2 alphabet: "(" ")" "[" "]".
inline constexpr TokenId kRoundOpen = 3;
inline constexpr TokenId kRoundClose = 4;
inline constexpr TokenId kSquareOpen = 5;
inline constexpr TokenId kSquareClose = 6;
inline constexpr std::size_t kDyckVocabSize = 7;

enum class Task { dyck2, copy, reverse };

Task parse_task(const std::string& name);
std::string to_string(Task task);
inline bool is_classification(Task task) { return task == Task::dyck2; }

struct DatasetConfig {
  Task task = Task::dyck2;
  std::size_t min_length = 2;
  std::size_t max_length = 24;
  std::size_t vocab_size = kDyckVocabSize;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  double corruption_rate = 0.5;  // dyck2: fraction of invalid examples

  void validate() const;
};

struct Example {
  std::vector<TokenId> source;
  // dyck2: {label} with 1 = valid. copy/reverse: bos, payload, eos.
  std::vector<TokenId> target;

  std::size_t length() const noexcept { return source.size(); }
  friend bool operator==(const Example&, const Example&) = default;
};

// Stack-based validity check over the Dyck-2 alphabet; any other id makes the
// string invalid.
bool dyck_valid(std::span<const TokenId> ids);

// "([])" <-> {3, 5, 6, 4}.
std::vector<TokenId> parse_dyck(const std::string& text);
std::string dyck_string(std::span<const TokenId> ids);

// Balanced Dyck-2 data. Valid strings have an even length in
// [min_length, max_length]; invalid ones are valid strings after one edit
// (swap two adjacent different symbols, delete one, or replace one by another
// bracket), redrawn until the stack checker rejects them. Exactly
// round(count * corruption_rate) examples are invalid, spread evenly.
std::vector<Example> gen_dyck(const DatasetConfig& config);

// Payload of uniform length in [min_length, max_length] with uniform ids in
// [kFirstPayloadId, vocab_size); the target is the payload (copy) or its
// reversal, wrapped in bos/eos.
std::vector<Example> gen_copy_reverse(const DatasetConfig& config);

std::vector<Example> generate(const DatasetConfig& config);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

inline constexpr const char* kSplitNames[] = {"train", "valid", "test"};

// The seed of one split: split k draws from mix_seed(config.seed, k).
DatasetConfig split_config(const DatasetConfig& config, std::size_t split, std::size_t count);

struct Dataset {
  DatasetConfig config;
  std::string split;
  std::vector<Example> examples;
};

// Writes `<dir>/<split>.tsv`. The first line echoes the config. Existing files
// are an error unless `force` is set; `dir` must exist.
std::vector<std::filesystem::path> write_splits(const std::filesystem::path& dir,
                                                const DatasetConfig& config, SplitSizes sizes,
                                                bool force);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
std::string format_dataset(const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
Dataset parse_dataset(const std::string& text);

// Sequences packed back to back, plus the same batch padded with kPadId.
struct Batch {
  std::vector<std::size_t> indices;  // example positions in the source vector
  std::vector<std::size_t> lengths;  // true source lengths
  std::vector<std::size_t> offsets;  // prefix sums of lengths
  std::vector<TokenId> packed;       // concatenated sources, no padding
  std::size_t width = 0;             // longest source in the batch
  std::vector<TokenId> padded;       // [batch x width], pad id 0
  std::vector<std::vector<TokenId>> targets;

  std::size_t size() const noexcept { return indices.size(); }
};

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices);

// Epoch-wise iteration. With shuffling, epoch e visits the examples in a
// Fisher-Yates permutation drawn from mix_seed(shuffle_seed, e); the last batch
// of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator(const std::vector<Example>& examples, std::size_t batch_size, bool shuffle,
                std::uint64_t shuffle_seed = 0);

  // Fills `batch` and returns true, or returns false at the end of the epoch
  // and starts the next one.
  bool next(Batch& batch);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void start_epoch();

  const std::vector<Example>& examples_;
  std::size_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace treeformer
