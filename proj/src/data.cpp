#include "treeformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace treeformer {

Task parse_task(const std::string& name) {
  if (name == "dyck2") {
    return Task::dyck2;
  }
  if (name == "copy") {
    return Task::copy;
  }
  if (name == "reverse") {
    return Task::reverse;
  }
  fail(ErrorKind::config, "unknown task '" + name + "' (expected dyck2, copy or reverse)");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::dyck2:
      return "dyck2";
    case Task::copy:
      return "copy";
    case Task::reverse:
      return "reverse";
  }
  return "?";
}

void DatasetConfig::validate() const {
  require(min_length >= 1 && min_length <= max_length, ErrorKind::config,
          "dataset lengths need 1 <= min_length <= max_length");
  require(count >= 1, ErrorKind::config, "dataset count must be at least 1");
  if (task == Task::dyck2) {
    require(max_length >= 2 && max_length % 2 == 0, ErrorKind::config,
            "dyck2 needs an even max_length of at least 2");
    require(vocab_size == kDyckVocabSize, ErrorKind::config, "dyck2 uses a vocabulary of 7 ids");
    require(corruption_rate >= 0 && corruption_rate <= 1, ErrorKind::config,
            "corruption_rate must be in [0, 1]");
  } else {
    require(vocab_size > kFirstPayloadId, ErrorKind::config,
            "copy/reverse need a vocabulary of at least 4 ids");
  }
}

namespace {

bool is_open(TokenId t) { return t == kRoundOpen || t == kSquareOpen; }
TokenId closer_of(TokenId open) { return open == kRoundOpen ? kRoundClose : kSquareClose; }

std::vector<TokenId> random_dyck(std::size_t n, Rng& rng) {
  std::vector<TokenId> out;
  std::vector<TokenId> stack;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t remaining = n - p;
    bool open;
    if (stack.size() == remaining) {
      open = false;
    } else if (stack.empty()) {
      open = true;
    } else {
      open = rng.bernoulli(0.5);
    }
    if (open) {
      const TokenId t = rng.bernoulli(0.5) ? kRoundOpen : kSquareOpen;
      stack.push_back(t);
      out.push_back(t);
    } else {
      out.push_back(closer_of(stack.back()));
      stack.pop_back();
    }
  }
  return out;
}

std::vector<TokenId> corrupt(const std::vector<TokenId>& valid, Rng& rng) {
  for (;;) {
    std::vector<TokenId> s = valid;
    switch (rng.below(3)) {
      case 0: {
        const std::size_t i = rng.below(s.size() - 1);
        if (s[i] == s[i + 1]) {
          continue;
        }
        std::swap(s[i], s[i + 1]);
        break;
      }
      case 1:
        s.erase(s.begin() + static_cast<std::ptrdiff_t>(rng.below(s.size())));
        break;
      default: {
        const std::size_t i = rng.below(s.size());
        TokenId replacement = s[i];
        while (replacement == s[i]) {
          replacement = static_cast<TokenId>(kRoundOpen + rng.below(4));
        }
        s[i] = replacement;
        break;
      }
    }
    if (!s.empty() && !dyck_valid(s)) {
      return s;
    }
  }
}

}  // namespace

bool dyck_valid(std::span<const TokenId> ids) {
  std::vector<TokenId> stack;
  for (TokenId t : ids) {
    if (is_open(t)) {
      stack.push_back(t);
    } else if (t == kRoundClose || t == kSquareClose) {
      if (stack.empty() || closer_of(stack.back()) != t) {
        return false;
      }
      stack.pop_back();
    } else {
      return false;
    }
  }
  return stack.empty();
}

std::vector<TokenId> parse_dyck(const std::string& text) {
  std::vector<TokenId> ids;
  for (char c : text) {
    switch (c) {
      case '(':
        ids.push_back(kRoundOpen);
        break;
      case ')':
        ids.push_back(kRoundClose);
        break;
      case '[':
        ids.push_back(kSquareOpen);
        break;
      case ']':
        ids.push_back(kSquareClose);
        break;
      case ' ':
        break;
      default:
        fail(ErrorKind::format, std::string("not a bracket: '") + c + "'");
    }
  }
  return ids;
}

std::string dyck_string(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId t : ids) {
    switch (t) {
      case kRoundOpen:
        out += '(';
        break;
      case kRoundClose:
        out += ')';
        break;
      case kSquareOpen:
        out += '[';
        break;
      case kSquareClose:
        out += ']';
        break;
      default:
        out += '?';
    }
  }
  return out;
}

std::vector<Example> gen_dyck(const DatasetConfig& config) {
  config.validate();
  require(config.task == Task::dyck2, ErrorKind::config, "gen_dyck: task is not dyck2");
  Rng rng(config.seed);
  const std::size_t lo = std::max<std::size_t>(1, (config.min_length + 1) / 2);
  const std::size_t hi = config.max_length / 2;
  require(lo <= hi, ErrorKind::config, "dyck2: no even length in [min_length, max_length]");
  std::vector<Example> out;
  out.reserve(config.count);
  for (std::size_t c = 0; c < config.count; ++c) {
    const std::size_t n = 2 * (lo + rng.below(hi - lo + 1));
    std::vector<TokenId> s = random_dyck(n, rng);
    // Example c is invalid when the running quota of negatives steps up.
    const auto quota = [&](std::size_t k) {
      return static_cast<std::size_t>(std::floor(static_cast<double>(k) * config.corruption_rate + 0.5));
    };
    if (quota(c + 1) > quota(c)) {
      out.push_back({corrupt(s, rng), {0}});
    } else {
      out.push_back({std::move(s), {1}});
    }
  }
  return out;
}

std::vector<Example> gen_copy_reverse(const DatasetConfig& config) {
  config.validate();
  require(config.task != Task::dyck2, ErrorKind::config, "gen_copy_reverse: task is dyck2");
  Rng rng(config.seed);
  const std::size_t payload_ids = config.vocab_size - kFirstPayloadId;
  std::vector<Example> out;
  out.reserve(config.count);
  for (std::size_t c = 0; c < config.count; ++c) {
    const std::size_t n = config.min_length + rng.below(config.max_length - config.min_length + 1);
    Example e;
    for (std::size_t i = 0; i < n; ++i) {
      e.source.push_back(static_cast<TokenId>(kFirstPayloadId + rng.below(payload_ids)));
    }
    e.target.push_back(kBosId);
    if (config.task == Task::copy) {
      e.target.insert(e.target.end(), e.source.begin(), e.source.end());
    } else {
      e.target.insert(e.target.end(), e.source.rbegin(), e.source.rend());
    }
    e.target.push_back(kEosId);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> generate(const DatasetConfig& config) {
  return config.task == Task::dyck2 ? gen_dyck(config) : gen_copy_reverse(config);
}

DatasetConfig split_config(const DatasetConfig& config, std::size_t split, std::size_t count) {
  DatasetConfig c = config;
  c.seed = mix_seed(config.seed, split);
  c.count = count;
  return c;
}

namespace {

std::string format_double(double x) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

void append_ids(std::string& out, std::span<const TokenId> ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += std::to_string(ids[i]);
  }
}

std::vector<TokenId> parse_ids(std::string_view text, std::size_t vocab, std::size_t line) {
  std::vector<TokenId> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == ' ') {
      ++pos;
      continue;
    }
    TokenId v = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    require(ec == std::errc() && (ptr == text.data() + text.size() || *ptr == ' '),
            ErrorKind::format, "line " + std::to_string(line) + ": bad token id");
    require(v < vocab, ErrorKind::format,
            "line " + std::to_string(line) + ": id " + std::to_string(v) +
                " outside the vocabulary of " + std::to_string(vocab));
    ids.push_back(v);
    pos = static_cast<std::size_t>(ptr - text.data());
  }
  return ids;
}

}  // namespace

std::string format_dataset(const Dataset& dataset) {
  const DatasetConfig& c = dataset.config;
  std::string out = "# task=" + to_string(c.task) + " min_length=" + std::to_string(c.min_length) +
                    " max_length=" + std::to_string(c.max_length) +
                    " vocab_size=" + std::to_string(c.vocab_size) +
                    " count=" + std::to_string(dataset.examples.size()) +
                    " seed=" + std::to_string(c.seed) +
                    " corruption_rate=" + format_double(c.corruption_rate) +
                    " split=" + dataset.split + "\n";
  for (const Example& e : dataset.examples) {
    append_ids(out, e.source);
    out += '\t';
    append_ids(out, e.target);
    out += '\n';
  }
  return out;
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.starts_with("# "), ErrorKind::format,
          "dataset: missing header line");
  std::map<std::string, std::string> fields;
  {
    std::istringstream header(line.substr(2));
    std::string item;
    while (header >> item) {
      const auto eq = item.find('=');
      require(eq != std::string::npos, ErrorKind::format, "dataset header: expected key=value");
      fields[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  const auto field = [&](const std::string& key) {
    const auto it = fields.find(key);
    require(it != fields.end(), ErrorKind::format, "dataset header: missing " + key);
    return it->second;
  };
  const auto number = [&](const std::string& key) -> std::uint64_t {
    try {
      return std::stoull(field(key));
    } catch (const std::logic_error&) {
      fail(ErrorKind::format, "dataset header: bad " + key);
    }
  };
  Dataset d;
  d.config.task = parse_task(field("task"));
  d.config.min_length = number("min_length");
  d.config.max_length = number("max_length");
  d.config.vocab_size = number("vocab_size");
  d.config.count = number("count");
  d.config.seed = number("seed");
  try {
    d.config.corruption_rate = std::stod(field("corruption_rate"));
  } catch (const std::logic_error&) {
    fail(ErrorKind::format, "dataset header: bad corruption_rate");
  }
  d.split = field("split");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::format,
            "line " + std::to_string(line_no) + ": expected source<TAB>target");
    Example e;
    e.source = parse_ids(std::string_view(line).substr(0, tab), d.config.vocab_size, line_no);
    e.target = parse_ids(std::string_view(line).substr(tab + 1), d.config.vocab_size, line_no);
    require(!e.source.empty() && !e.target.empty(), ErrorKind::format,
            "line " + std::to_string(line_no) + ": empty source or target");
    d.examples.push_back(std::move(e));
  }
  require(d.examples.size() == d.config.count, ErrorKind::format,
          "dataset: header count does not match the number of examples");
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::path, "cannot write " + path.string());
  out << format_dataset(dataset);
  require(static_cast<bool>(out), ErrorKind::path, "write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::path, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_dataset(text.str());
}

std::vector<std::filesystem::path> write_splits(const std::filesystem::path& dir,
                                                const DatasetConfig& config, SplitSizes sizes,
                                                bool force) {
  config.validate();
  require(std::filesystem::is_directory(dir), ErrorKind::path,
          "output directory does not exist: " + dir.string());
  const std::size_t counts[] = {sizes.train, sizes.valid, sizes.test};
  std::vector<std::filesystem::path> paths;
  for (std::size_t k = 0; k < 3; ++k) {
    paths.push_back(dir / (std::string(kSplitNames[k]) + ".tsv"));
    require(force || !std::filesystem::exists(paths.back()), ErrorKind::path,
            paths.back().string() + " exists (use --force to overwrite)");
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (counts[k] == 0) {
      continue;
    }
    Dataset d;
    d.config = config;
    d.split = kSplitNames[k];
    d.examples = generate(split_config(config, k, counts[k]));
    write_dataset(paths[k], d);
  }
  return paths;
}

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
  require(!indices.empty(), ErrorKind::empty_input, "make_batch: no examples");
  Batch b;
  b.offsets.push_back(0);
  for (std::size_t i : indices) {
    require(i < examples.size(), ErrorKind::index, "make_batch: index out of range");
    const Example& e = examples[i];
    require(!e.source.empty(), ErrorKind::empty_input, "make_batch: empty source");
    b.indices.push_back(i);
    b.lengths.push_back(e.source.size());
    b.packed.insert(b.packed.end(), e.source.begin(), e.source.end());
    b.offsets.push_back(b.packed.size());
    b.width = std::max(b.width, e.source.size());
    b.targets.push_back(e.target);
  }
  b.padded.assign(b.size() * b.width, kPadId);
  for (std::size_t r = 0; r < b.size(); ++r) {
    std::copy(b.packed.begin() + static_cast<std::ptrdiff_t>(b.offsets[r]),
              b.packed.begin() + static_cast<std::ptrdiff_t>(b.offsets[r + 1]),
              b.padded.begin() + static_cast<std::ptrdiff_t>(r * b.width));
  }
  return b;
}

BatchIterator::BatchIterator(const std::vector<Example>& examples, std::size_t batch_size,
                             bool shuffle, std::uint64_t shuffle_seed)
    : examples_(examples), batch_size_(batch_size), shuffle_(shuffle), seed_(shuffle_seed) {
  require(batch_size >= 1, ErrorKind::config, "batch size must be at least 1");
  require(!examples.empty(), ErrorKind::empty_input, "BatchIterator: no examples");
  start_epoch();
}

void BatchIterator::start_epoch() {
  order_.resize(examples_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) {
    order_[i] = i;
  }
  if (shuffle_) {
    Rng rng(mix_seed(seed_, epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng.below(i)]);
    }
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    start_epoch();
    return false;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  batch = make_batch(examples_, std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return true;
}

}  // namespace treeformer
