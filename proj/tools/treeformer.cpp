#include <CLI11.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "treeformer/grad_bridge.hpp"
#include "treeformer/profiler.hpp"
#include "treeformer/sweep.hpp"

namespace fs = std::filesystem;
using namespace treeformer;

namespace {

// Flags shared by every subcommand that builds a RunConfig. Explicit flags
// win over --set, which wins over the config file.
struct ConfigFlags {
  std::string path;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> height;
  std::optional<std::size_t> depth;
  std::optional<std::size_t> beam;
  std::optional<double> length_penalty;
  std::optional<std::size_t> steps;
  std::string data;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--config", path, "Config file (key = value lines)");
    app->add_option("--set", assignments, "Config override key=value (repeatable)");
    app->add_option("--seed", seed, "Model and training seed");
    app->add_option("--height", height, "Maximum chart height H");
    app->add_option("--depth", depth, "Pre-encoder layers L");
    app->add_option("--beam", beam, "Beam size");
    app->add_option("--length-penalty", length_penalty, "Length penalty alpha");
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--data", data, "Dataset directory");
  }

  RunConfig build(RunConfig config) const {
    if (!path.empty()) {
      config = RunConfig::load(path);
    }
    for (const auto& a : assignments) {
      apply_override(config, a);
    }
    if (seed) config.seed = *seed;
    if (height) config.height = *height;
    if (depth) config.depth = *depth;
    if (beam) config.beam = *beam;
    if (length_penalty) config.length_penalty = *length_penalty;
    if (steps) config.steps = *steps;
    if (!data.empty()) config.data = data;
    if (!out.empty()) config.out = out;
    config.validate();
    return config;
  }
};

fs::path split_path(const std::string& dir, const std::string& split) {
  require(!dir.empty(), ErrorKind::config, "no dataset directory (use --data or data = ...)");
  return fs::path(dir) / (split + ".tsv");
}

std::vector<Example> load_split(const RunConfig& config, const std::string& split) {
  const fs::path path = split_path(config.data, split);
  require(fs::exists(path), ErrorKind::path, "dataset file '" + path.string() + "' not found");
  Dataset dataset = read_dataset(path);
  require(dataset.config.task == config.task, ErrorKind::config,
          "dataset task " + to_string(dataset.config.task) + " does not match config task " +
              to_string(config.task));
  require(dataset.config.vocab_size == config.vocab_size, ErrorKind::config,
          "dataset vocab_size " + std::to_string(dataset.config.vocab_size) +
              " does not match config vocab_size " + std::to_string(config.vocab_size));
  return std::move(dataset.examples);
}

// Without a dataset directory the split is regenerated from the config, which
// is how sweeps without --data draw their examples.
std::vector<Example> examples_for(const RunConfig& config, const std::string& split) {
  if (!config.data.empty()) {
    return load_split(config, split);
  }
  const std::size_t counts[] = {config.train_count, config.valid_count, config.test_count};
  for (std::size_t k = 0; k < 3; ++k) {
    if (split == kSplitNames[k]) {
      return generate(split_config(config.dataset_config(), k, counts[k]));
    }
  }
  fail(ErrorKind::config, "unknown split '" + split + "'");
}

void require_dir(const std::string& dir, const std::string& what) {
  require(!dir.empty(), ErrorKind::config, what + " directory not given (use --out)");
  require(fs::is_directory(dir), ErrorKind::path, what + " directory '" + dir + "' does not exist");
}

// Dyck-2 sentences are bracket strings; other tasks take space-separated ids.
std::vector<TokenId> tokenize(const std::string& sentence, const RunConfig& config) {
  if (config.task == Task::dyck2) {
    std::string compact;
    for (char c : sentence) {
      if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
    }
    return parse_dyck(compact);
  }
  std::vector<TokenId> ids;
  std::istringstream in(sentence);
  std::string word;
  while (in >> word) {
    std::size_t used = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == word.size() && id >= kFirstPayloadId && id < config.vocab_size,
            ErrorKind::format,
            "token '" + word + "' is not a payload id in [3, " +
                std::to_string(config.vocab_size) + ")");
    ids.push_back(static_cast<TokenId>(id));
  }
  return ids;
}

RunConfig gradcheck_defaults() {
  RunConfig c;
  c.dim = 8;
  c.heads = 2;
  c.ffn = 8;
  c.height = 4;
  c.depth = 1;
  c.decoder_layers = 1;
  c.min_length = 2;
  c.max_length = 6;
  c.max_output_length = 8;
  c.data_seed = 5;
  return c;
}

int cmd_gen(const ConfigFlags& flags, bool force) {
  RunConfig config = flags.build({});
  const std::string dir = flags.out.empty() ? config.data : flags.out;
  require_dir(dir, "output");
  DatasetConfig dataset = config.dataset_config();
  const auto paths = write_splits(dir, dataset,
                                  {config.train_count, config.valid_count, config.test_count}, force);
  for (const auto& p : paths) {
    std::cout << p.string() << "\n";
  }
  return 0;
}

int cmd_train(const ConfigFlags& flags) {
  const RunConfig config = flags.build({});
  require_dir(config.out, "output");
  const auto train_set = load_split(config, "train");
  const auto valid = load_split(config, "valid");
  const fs::path checkpoint = fs::path(config.out) / "model.ckpt";
  std::ofstream log_file(fs::path(config.out) / "train.log");
  require(bool(log_file), ErrorKind::path, "cannot write train.log in '" + config.out + "'");

  // Log lines go to both stdout and the log file.
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c != EOF) {
        a->sputc(static_cast<char>(c));
        b->sputc(static_cast<char>(c));
      }
      return c;
    }
    int sync() override { return a->pubsync() | b->pubsync(); }
  } tee;
  tee.a = std::cout.rdbuf();
  tee.b = log_file.rdbuf();
  std::ostream log(&tee);

  Model model(config);
  TrainOptions options;
  options.checkpoint = checkpoint;
  options.log = &log;
  const TrainResult result = train(model, train_set, valid, options);
  log.flush();
  if (result.diverged) {
    fail(ErrorKind::numeric, "training diverged after step " +
                                 std::to_string(result.steps_completed) +
                                 "; last good checkpoint kept at " + checkpoint.string());
  }
  std::printf("best_step=%zu best_metric=%.6f checkpoint=%s\n", result.best_step,
              result.best_metric, checkpoint.string().c_str());
  return 0;
}

int cmd_eval(const ConfigFlags& flags, const std::string& checkpoint_path, const std::string& split) {
  require(fs::exists(checkpoint_path), ErrorKind::path,
          "checkpoint '" + checkpoint_path + "' not found");
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  // The config echo is the base; flags only touch decoding and data location.
  RunConfig config = RunConfig::parse(checkpoint.config_text);
  if (flags.beam) config.beam = *flags.beam;
  if (flags.length_penalty) config.length_penalty = *flags.length_penalty;
  if (!flags.data.empty()) config.data = flags.data;
  config.validate();
  const Model model = Model::from_checkpoint(checkpoint);
  const auto examples = examples_for(config, split);
  const EvalResult result = evaluate(model, examples, config.beam, config.length_penalty);
  std::printf("split=%s metric=%.6f loss=%.6f count=%zu\n", split.c_str(), result.metric,
              result.loss, result.count);
  return 0;
}

int cmd_gradcheck(const ConfigFlags& flags, const std::string& precision, bool inject_fault,
                  std::size_t count) {
  const RunConfig config = flags.build(gradcheck_defaults());
  require(config.dim <= 16, ErrorKind::config, "gradcheck needs dim <= 16");
  require(config.max_length <= 8, ErrorKind::config, "gradcheck needs max_length <= 8");
  require(precision == "32" || precision == "64" || precision == "both", ErrorKind::config,
          "--precision must be 32, 64 or both");
  DatasetConfig dataset = config.dataset_config();
  dataset.count = count;
  const auto examples = generate(dataset);

  bool passed = true;
  for (bool use64 : {false, true}) {
    if ((use64 && precision == "32") || (!use64 && precision == "64")) continue;
    ModelGradCheckOptions options;
    options.analytic_64bit = use64;
    options.flip_concat_grad = inject_fault;
    const ModelGradCheck check = model_grad_check(config, examples, options);
    std::cout << format_grad_check(check);
    passed = passed && check.passed();
  }
  std::cout << std::flush;
  require(passed, ErrorKind::numeric, "gradient check exceeded tolerance");
  return 0;
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == text.size() && !text.empty(), ErrorKind::config,
          "bad " + what + " value '" + text + "'");
  return static_cast<std::size_t>(v);
}

int cmd_profile(const ConfigFlags& flags, const std::vector<std::size_t>& lengths,
                std::vector<std::string> heights, std::size_t dim, std::size_t reps, bool no_time) {
  if (flags.height) heights = {std::to_string(*flags.height)};
  require(!lengths.empty() && !heights.empty(), ErrorKind::empty_input, "empty profile sweep");
  std::vector<ProfilePoint> points;
  for (std::size_t n : lengths) {
    for (const auto& h : heights) {
      points.push_back({n, h == "n" ? n : parse_size(h, "height")});
    }
  }
  ProfileOptions options;
  options.dim = dim;
  options.repetitions = reps;
  options.time = !no_time;
  options.seed = flags.seed.value_or(1);
  const std::string csv = format_profile_csv(profile_run(points, options));
  if (flags.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream file(flags.out);
    require(bool(file), ErrorKind::path, "cannot write '" + flags.out + "'");
    file << csv;
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& sentence) {
  require(fs::exists(checkpoint_path), ErrorKind::path,
          "checkpoint '" + checkpoint_path + "' not found");
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const Model model = Model::from_checkpoint(checkpoint);
  const RunConfig& config = model.config();
  Example example;
  example.source = tokenize(sentence, config);
  require(!example.source.empty(), ErrorKind::empty_input, "empty sentence");
  require(example.source.size() <= config.max_length, ErrorKind::contract,
          "sentence length " + std::to_string(example.source.size()) +
              " exceeds configured max_length " + std::to_string(config.max_length));
  example.target = is_classification(config.task) ? std::vector<TokenId>{0}
                                                  : std::vector<TokenId>{kBosId, kEosId};
  const std::vector<Example> one = {example};
  const std::size_t index[] = {0};
  ForwardOptions options;
  options.record_weights = true;
  const auto charts = model.encode(make_batch(one, index), options);
  const SpanChart& chart = charts.front();
  std::cout << chart.render();
  // Structured weights: 1-based span, split point k = last index of the left part.
  for (std::size_t h = 2; h <= chart.max_height(); ++h) {
    for (Span s : chart.cells_of_length(h)) {
      const auto w = chart.split_weights(s);
      for (std::size_t k = 0; k < w.size(); ++k) {
        std::printf("cell %zu %zu split=%zu weight=%.9g\n", s.i + 1, s.j + 1, s.i + k + 1,
                    static_cast<double>(w[k]));
      }
    }
  }
  return 0;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& axis_name,
              const std::vector<std::size_t>& values) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const RunConfig config = flags.build({});
  require(!values.empty(), ErrorKind::empty_input, "sweep needs at least one value");
  require_dir(config.out, "output");
  const auto train_set = examples_for(config, "train");
  const auto valid = examples_for(config, "valid");
  std::ofstream log(fs::path(config.out) / "sweep.log");
  const auto rows = run_sweep(config, axis, values, train_set, valid, config.out, &log);
  const std::string csv = format_sweep_csv(axis, rows);
  std::ofstream(fs::path(config.out) / "sweep.csv") << csv;
  std::cout << csv;
  std::vector<double> metrics;
  for (const auto& r : rows) metrics.push_back(r.metric);
  std::cout << "shape=" << (sweep_shape_ok(metrics) ? "rise-then-plateau-or-dip" : "other") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-chart encoder toolkit"};
  app.require_subcommand(1);

  ConfigFlags flags;
  bool force = false;
  std::string checkpoint;
  std::string split = "valid";
  std::string precision = "32";
  bool inject_fault = false;
  std::size_t gradcheck_examples = 3;
  std::vector<std::size_t> lengths = {16, 32, 64, 128};
  std::vector<std::string> heights = {"8"};
  std::size_t profile_dim = 32;
  std::size_t reps = 5;
  bool no_time = false;
  std::string sentence;
  std::string axis = "height";
  std::vector<std::size_t> values = {1, 2, 4, 6, 8};

  auto* gen = app.add_subcommand("gen", "Generate train/valid/test splits");
  flags.add_to(gen);
  gen->add_option("--out", flags.out, "Output directory");
  gen->add_flag("--force", force, "Overwrite existing files");

  auto* train_cmd = app.add_subcommand("train", "Train and keep the best checkpoint");
  flags.add_to(train_cmd);
  train_cmd->add_option("--out", flags.out, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  flags.add_to(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--split", split, "train, valid or test");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of a tiny model");
  flags.add_to(grad);
  grad->add_option("--precision", precision, "32, 64 or both");
  grad->add_option("--examples", gradcheck_examples, "Examples in the checked batch");
  grad->add_flag("--inject-fault", inject_fault, "Corrupt the composition backward pass");

  auto* prof = app.add_subcommand("profile", "Operation counts and timing as CSV");
  flags.add_to(prof);
  prof->add_option("--out", flags.out, "CSV path (stdout when omitted)");
  prof->add_option("--lengths", lengths, "Sequence lengths")->delimiter(',');
  prof->add_option("--heights", heights, "Heights; 'n' means full height")->delimiter(',');
  prof->add_option("--dim", profile_dim, "Vector size");
  prof->add_option("--reps", reps, "Timed repetitions");
  prof->add_flag("--no-time", no_time, "Counters only");

  auto* inspect = app.add_subcommand("inspect", "Print the chart of one sentence");
  inspect->add_option("--checkpoint", checkpoint)->required();
  inspect->add_option("sentence", sentence, "Bracket string or space-separated ids")->required();

  auto* sweep = app.add_subcommand("sweep", "Train one model per height or depth value");
  flags.add_to(sweep);
  sweep->add_option("--out", flags.out, "Output directory");
  sweep->add_option("--axis", axis, "height or depth");
  sweep->add_option("--values", values, "Axis values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(flags, force);
    if (train_cmd->parsed()) return cmd_train(flags);
    if (eval_cmd->parsed()) return cmd_eval(flags, checkpoint, split);
    if (grad->parsed()) return cmd_gradcheck(flags, precision, inject_fault, gradcheck_examples);
    if (prof->parsed()) return cmd_profile(flags, lengths, heights, profile_dim, reps, no_time);
    if (inspect->parsed()) return cmd_inspect(checkpoint, sentence);
    if (sweep->parsed()) return cmd_sweep(flags, axis, values);
  } catch (const Error& e) {
    std::cout << std::flush;
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
