#include "treeformer/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace treeformer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  require(ec == std::errc() && ptr == value.data() + value.size(), ErrorKind::config,
          "bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  fail(ErrorKind::config, "bad value for " + key + ": '" + value + "' (expected true or false)");
}

std::string format_double(double x) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field number_field(std::string key, T RunConfig::*member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(std::string key, double RunConfig::*member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            c.*member = parse_number<double>(key, v);
          },
          [member](const RunConfig& c) { return format_double(c.*member); }};
}

Field bool_field(std::string key, bool RunConfig::*member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(std::string key, std::string RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"task", [](RunConfig& c, const std::string& v) { c.task = parse_task(v); },
       [](const RunConfig& c) { return to_string(c.task); }},
      string_field("data", &RunConfig::data),
      string_field("out", &RunConfig::out),
      number_field("vocab_size", &RunConfig::vocab_size),
      number_field("dim", &RunConfig::dim),
      number_field("height", &RunConfig::height),
      number_field("depth", &RunConfig::depth),
      number_field("decoder_layers", &RunConfig::decoder_layers),
      number_field("heads", &RunConfig::heads),
      number_field("ffn", &RunConfig::ffn),
      double_field("dropout", &RunConfig::dropout),
      bool_field("composition_bias", &RunConfig::composition_bias),
      bool_field("learned_qk", &RunConfig::learned_qk),
      bool_field("compose_tanh", &RunConfig::compose_tanh),
      bool_field("use_summary", &RunConfig::use_summary),
      bool_field("positional", &RunConfig::positional),
      number_field("max_output_length", &RunConfig::max_output_length),
      {"optimizer", [](RunConfig& c, const std::string& v) { c.optimizer = parse_optimizer_kind(v); },
       [](const RunConfig& c) { return to_string(c.optimizer); }},
      double_field("lr", &RunConfig::lr),
      double_field("beta1", &RunConfig::beta1),
      double_field("beta2", &RunConfig::beta2),
      double_field("adam_eps", &RunConfig::adam_eps),
      double_field("weight_decay", &RunConfig::weight_decay),
      {"schedule", [](RunConfig& c, const std::string& v) { c.schedule = parse_lr_schedule(v); },
       [](const RunConfig& c) { return to_string(c.schedule); }},
      number_field("warmup", &RunConfig::warmup),
      double_field("clip_norm", &RunConfig::clip_norm),
      double_field("label_smoothing", &RunConfig::label_smoothing),
      number_field("batch_size", &RunConfig::batch_size),
      number_field("steps", &RunConfig::steps),
      number_field("eval_every", &RunConfig::eval_every),
      number_field("seed", &RunConfig::seed),
      number_field("workers", &RunConfig::workers),
      number_field("beam", &RunConfig::beam),
      double_field("length_penalty", &RunConfig::length_penalty),
      number_field("min_length", &RunConfig::min_length),
      number_field("max_length", &RunConfig::max_length),
      number_field("train_count", &RunConfig::train_count),
      number_field("valid_count", &RunConfig::valid_count),
      number_field("test_count", &RunConfig::test_count),
      double_field("corruption_rate", &RunConfig::corruption_rate),
      number_field("data_seed", &RunConfig::data_seed),
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      return f;
    }
  }
  fail(ErrorKind::config, "unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) {
      out.push_back(f.key);
    }
    return out;
  }();
  return names;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') {
      continue;
    }
    const auto eq = stripped.find('=');
    require(eq != std::string::npos, ErrorKind::config,
            "config line " + std::to_string(line_no) + ": expected key = value");
    try {
      config.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::path, "cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  treeformer_config().validate();
  pre_encoder_config().validate();
  if (!is_classification(task)) {
    decoder_config().validate();
  }
  require(vocab_size > kFirstPayloadId, ErrorKind::config, "vocab_size must exceed 3");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be at least 1");
  require(eval_every >= 1, ErrorKind::config, "eval_every must be at least 1");
  require(lr > 0, ErrorKind::config, "lr must be positive");
  require(label_smoothing >= 0 && label_smoothing < 1, ErrorKind::config,
          "label_smoothing must be in [0, 1)");
  require(beam >= 1, ErrorKind::config, "beam must be at least 1");
  require(length_penalty >= 0, ErrorKind::config, "length_penalty must be non-negative");
  require(workers >= 1, ErrorKind::config, "workers must be at least 1");
  if (!is_classification(task)) {
    require(max_output_length >= max_length + 1, ErrorKind::config,
            "max_output_length must cover max_length plus eos");
  }
}

TreeformerConfig RunConfig::treeformer_config() const {
  TreeformerConfig c;
  c.dim = dim;
  c.max_height = height;
  c.dropout = dropout;
  c.seed = seed;
  c.composition_bias = composition_bias;
  c.learned_qk = learned_qk;
  c.compose_tanh = compose_tanh;
  return c;
}

PreEncoderConfig RunConfig::pre_encoder_config() const {
  PreEncoderConfig c;
  c.vocab_size = vocab_size;
  c.dim = dim;
  c.layers = depth;
  c.heads = heads;
  c.ffn = ffn;
  c.dropout = dropout;
  c.positional = positional;
  return c;
}

DecoderConfig RunConfig::decoder_config() const {
  DecoderConfig c;
  c.vocab_size = vocab_size;
  c.dim = dim;
  c.layers = decoder_layers;
  c.heads = heads;
  c.ffn = ffn;
  c.dropout = dropout;
  c.max_output_length = max_output_length;
  c.beam_size = beam;
  c.length_penalty = length_penalty;
  c.positional = positional;
  return c;
}

OptimizerConfig RunConfig::optimizer_config() const {
  OptimizerConfig c;
  c.kind = optimizer;
  c.lr = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.eps = adam_eps;
  c.weight_decay = weight_decay;
  c.schedule = schedule;
  c.warmup_steps = warmup;
  c.clip_norm = clip_norm;
  return c;
}

DatasetConfig RunConfig::dataset_config() const {
  DatasetConfig c;
  c.task = task;
  c.min_length = min_length;
  c.max_length = max_length;
  c.vocab_size = vocab_size;
  c.count = train_count;
  c.seed = data_seed;
  c.corruption_rate = corruption_rate;
  return c;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, ErrorKind::config,
          "override '" + assignment + "' is not key=value");
  config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace treeformer
