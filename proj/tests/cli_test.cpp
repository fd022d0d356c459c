#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "treeformer/model.hpp"

namespace treeformer {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("treeformer_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path mkdir(const std::string& name) const {
    fs::create_directories(dir_ / name);
    return dir_ / name;
  }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  Result run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string command =
        std::string(TREEFORMER_CLI) + " " + args + " 2>" + err.string();
    Result r;
    FILE* pipe = ::popen(command.c_str(), "r");
    char buffer[4096];
    std::size_t got = 0;
    while ((got = std::fread(buffer, 1, sizeof buffer, pipe)) > 0) {
      r.out.append(buffer, got);
    }
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
  }

  // Nonzero exit with exactly one stderr line of the form "error: <kind>: ...".
  static void expect_error(const Result& r, const std::string& kind) {
    EXPECT_NE(r.code, 0);
    EXPECT_TRUE(std::regex_match(r.err, std::regex("error: [a-z-]+: [^\n]*\n"))) << r.err;
    EXPECT_EQ(r.err.rfind("error: " + kind + ": ", 0), 0u) << r.err;
  }

  fs::path dir_;
};

constexpr const char* kTinyDyck =
    "task = dyck2\n"
    "dim = 16\nheads = 2\nffn = 16\nheight = 4\n"
    "max_length = 12\n"
    "train_count = 120\nvalid_count = 60\ntest_count = 60\n"
    "steps = 20\neval_every = 10\n";

constexpr const char* kTinyCopy =
    "task = copy\nvocab_size = 8\n"
    "dim = 16\nheads = 2\nffn = 16\nheight = 3\ndecoder_layers = 1\n"
    "min_length = 1\nmax_length = 5\nmax_output_length = 8\n"
    "train_count = 100\nvalid_count = 40\ntest_count = 40\n"
    "steps = 50\neval_every = 25\n";

// Metric value from a "key=value ..." report line.
double field(const std::string& line, const std::string& key) {
  const auto at = line.find(key + "=");
  EXPECT_NE(at, std::string::npos) << line;
  return std::stod(line.substr(at + key.size() + 1));
}

TEST_F(Cli, GenIsByteIdenticalForTheSameSeed) {
  const auto config = write("c.cfg", kTinyDyck);
  ASSERT_EQ(run("gen --config " + config.string() + " --out " + mkdir("a").string()).code, 0);
  ASSERT_EQ(run("gen --config " + config.string() + " --out " + mkdir("b").string()).code, 0);
  for (const char* split : {"train", "valid", "test"}) {
    const std::string name = std::string(split) + ".tsv";
    EXPECT_EQ(slurp(path("a") / name), slurp(path("b") / name)) << split;
  }
  ASSERT_EQ(run("gen --config " + config.string() + " --seed 7 --set data_seed=9 --out " +
                mkdir("c").string())
                .code,
            0);
  EXPECT_NE(slurp(path("a") / "train.tsv"), slurp(path("c") / "train.tsv"));
}

TEST_F(Cli, GenDyckLabelsAgreeWithTheStackOracle) {
  ASSERT_EQ(run("gen --set max_length=24 --set train_count=2000 --out " + mkdir("d").string()).code,
            0);
  const Dataset data = read_dataset(path("d") / "train.tsv");
  ASSERT_EQ(data.examples.size(), 2000u);
  for (const Example& e : data.examples) {
    ASSERT_LE(e.length(), 24u);
    // Independent check: each closer must match the most recent opener.
    std::vector<TokenId> stack;
    bool ok = true;
    for (TokenId t : e.source) {
      if (t == kRoundOpen || t == kSquareOpen) {
        stack.push_back(t);
      } else if (!stack.empty() && stack.back() + 1 == t) {
        stack.pop_back();
      } else {
        ok = false;
      }
    }
    ok = ok && stack.empty();
    EXPECT_EQ(e.target.front(), ok ? 1u : 0u) << dyck_string(e.source);
  }
}

TEST_F(Cli, GenErrors) {
  expect_error(run("gen --out " + path("missing").string()), "path");
  const auto out = mkdir("out");
  const auto config = write("c.cfg", kTinyDyck);
  ASSERT_EQ(run("gen --config " + config.string() + " --out " + out.string()).code, 0);
  expect_error(run("gen --config " + config.string() + " --out " + out.string()), "path");
  EXPECT_EQ(run("gen --config " + config.string() + " --out " + out.string() + " --force").code, 0);
}

TEST_F(Cli, ConfigErrorsAreSingleLines) {
  expect_error(run("gen --set nosuchkey=1 --out " + mkdir("x").string()), "config");
  expect_error(run("gen --config " + path("nope.cfg").string()), "path");
  expect_error(run("gen --set height=0 --out " + mkdir("y").string()), "config");
  expect_error(run("train --out " + mkdir("z").string()), "config");
  expect_error(run("train --data " + path("nodata").string() + " --out " + mkdir("w").string()),
               "path");
  expect_error(run("frobnicate"), "usage");
}

TEST_F(Cli, TrainSmokeWritesALoadableCheckpointAndIsDeterministic) {
  const auto config = write("c.cfg", kTinyCopy);
  const auto data = mkdir("data");
  ASSERT_EQ(run("gen --config " + config.string() + " --out " + data.string()).code, 0);
  std::string logs[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = mkdir("run" + std::to_string(k));
    const Result r = run("train --config " + config.string() + " --data " + data.string() +
                      " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    logs[k] = slurp(out / "train.log");
    const Checkpoint ckpt = load_checkpoint(out / "model.ckpt");
    const Model model = Model::from_checkpoint(ckpt);
    EXPECT_EQ(model.config().steps, 50u);
    EXPECT_EQ(model.config().task, Task::copy);
  }
  EXPECT_NE(logs[0].find("step=50 train_loss="), std::string::npos) << logs[0];
  EXPECT_EQ(logs[0], logs[1]);
}

TEST_F(Cli, EvalReproducesTheCheckpointMetricAndBeamOneMatchesGreedy) {
  const auto config = write("c.cfg", kTinyCopy);
  const auto data = mkdir("data");
  ASSERT_EQ(run("gen --config " + config.string() + " --out " + data.string()).code, 0);
  const auto out = mkdir("run");
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --out " +
                out.string())
                .code,
            0);
  const std::string ckpt = (out / "model.ckpt").string();
  const Result greedy = run("eval --checkpoint " + ckpt);
  const Result beam1 = run("eval --checkpoint " + ckpt + " --beam 1");
  ASSERT_EQ(greedy.code, 0) << greedy.err;
  EXPECT_EQ(greedy.out, beam1.out);
  EXPECT_NEAR(field(greedy.out, "metric"), load_checkpoint(ckpt).metric, 1e-3);
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --beam 3 --length-penalty 0.6").code, 0);
}

TEST_F(Cli, EvalRejectsVocabMismatchAndMissingCheckpoint) {
  const auto copy_cfg = write("copy.cfg", kTinyCopy);
  const auto data = mkdir("data");
  ASSERT_EQ(run("gen --config " + copy_cfg.string() + " --out " + data.string()).code, 0);
  const auto out = mkdir("run");
  ASSERT_EQ(run("train --config " + copy_cfg.string() + " --steps 2 --data " + data.string() +
                " --out " + out.string())
                .code,
            0);
  const auto other = mkdir("other");
  ASSERT_EQ(run("gen --config " + copy_cfg.string() + " --set vocab_size=10 --out " +
                other.string())
                .code,
            0);
  expect_error(run("eval --checkpoint " + (out / "model.ckpt").string() + " --data " +
                   other.string()),
               "config");
  expect_error(run("eval --checkpoint " + path("none.ckpt").string()), "path");
}

TEST_F(Cli, UntrainedDyckModelIsAtChance) {
  const auto config = write("c.cfg",
                            std::string(kTinyDyck) + "steps = 1\neval_every = 1\nlr = 1e-9\n"
                                                     "valid_count = 2000\n");
  const auto out = mkdir("run");
  ASSERT_EQ(run("sweep --config " + config.string() + " --values 4 --out " + out.string()).code, 0);
  const Result r = run("eval --checkpoint " + (out / "height_4.ckpt").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(field(r.out, "metric"), 0.5, 0.03);
}

TEST_F(Cli, GradcheckPassesAndCatchesACorruptedBackward) {
  const Result ok = run("gradcheck --precision both");
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("treeformer.W"), std::string::npos);
  EXPECT_NE(ok.out.find("32-bit analytic"), std::string::npos);
  EXPECT_NE(ok.out.find("64-bit analytic"), std::string::npos);
  EXPECT_EQ(run("gradcheck --set task=copy --set vocab_size=8").code, 0);
  EXPECT_EQ(run("gradcheck --depth 0 --height 1").code, 0);
  const Result bad = run("gradcheck --inject-fault");
  expect_error(bad, "numeric");
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  expect_error(run("gradcheck --set dim=32"), "config");
  expect_error(run("gradcheck --set max_length=9 --set max_output_length=10"), "config");
}

TEST_F(Cli, ProfileCsv) {
  const Result r = run("profile --no-time --lengths 4,8 --heights 2,n");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "n,H,compositions,pool_candidates,cells,level_steps,wall_ms,chart_bytes");
  std::vector<std::string> rows;
  while (std::getline(lines, line)) {
    rows.push_back(line.substr(0, line.find(',', line.find(',', line.find(',') + 1) + 1)));
  }
  // n=8, H=n: 7*1 + 6*2 + ... + 1*7 = 84 compositions.
  EXPECT_EQ(rows, (std::vector<std::string>{"4,2,3", "4,4,10", "8,2,7", "8,8,84"}));
  const auto csv = path("p.csv");
  ASSERT_EQ(run("profile --no-time --lengths 16 --height 8 --out " + csv.string()).code, 0);
  EXPECT_NE(slurp(csv).find("\n16,8,308,308,"), std::string::npos);
}

class CliInspect : public Cli {
 protected:
  void SetUp() override {
    Cli::SetUp();
    const auto config = write("c.cfg", kTinyDyck);
    ASSERT_EQ(run("sweep --config " + config.string() + " --values 4 --steps 10 --out " +
                  mkdir("run").string())
                  .code,
              0);
    checkpoint_ = (path("run") / "height_4.ckpt").string();
  }

  struct Weight {
    std::size_t i, j, k;
    double w;
  };

  static std::vector<Weight> parse_weights(const std::string& out) {
    std::vector<Weight> weights;
    std::istringstream lines(out);
    std::string line;
    while (std::getline(lines, line)) {
      Weight w{};
      if (std::sscanf(line.c_str(), "cell %zu %zu split=%zu weight=%lf", &w.i, &w.j, &w.k, &w.w) ==
          4) {
        weights.push_back(w);
      }
    }
    return weights;
  }

  std::string checkpoint_;
};

TEST_F(CliInspect, LengthTwoInputHasOneCellWithWeightOne) {
  const Result r = run("inspect --checkpoint " + checkpoint_ + " \"()\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto w = parse_weights(r.out);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].i, 1u);
  EXPECT_EQ(w[0].j, 2u);
  EXPECT_EQ(w[0].k, 1u);
  EXPECT_EQ(w[0].w, 1.0);
  EXPECT_NE(r.out.find("len  2 | [1,2] k=1:1.000 |"), std::string::npos) << r.out;
}

TEST_F(CliInspect, WeightsSumToOneAndMatchAnOfflineRecomputation) {
  const std::string sentence = "([()])[]";
  const Result r = run("inspect --checkpoint " + checkpoint_ + " \"" + sentence + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto printed = parse_weights(r.out);

  // Recompute pooling weights from the serialized tensors. Token cells come
  // from the reloaded model; everything above them is redone in long double:
  // cell = sum_k softmax(s)_k (W [l; r] + b), s_k = (Q c_k) . (K w) / sqrt(d).
  const Checkpoint ckpt = load_checkpoint(checkpoint_);
  const Model model = Model::from_checkpoint(ckpt);
  const std::size_t d = model.config().dim;
  const auto& W = ckpt.tensor("treeformer.W").values;
  const auto& b = ckpt.tensor("treeformer.b").values;
  const auto& w = ckpt.tensor("treeformer.w").values;
  const auto& Q = ckpt.tensor("treeformer.Q").values;
  const auto& K = ckpt.tensor("treeformer.K").values;
  std::vector<long double> kw(d, 0);
  for (std::size_t o = 0; o < d; ++o) {
    for (std::size_t i = 0; i < d; ++i) kw[o] += static_cast<long double>(K[o * d + i]) * w[i];
  }

  const std::vector<Example> one = {{parse_dyck(sentence), {1}}};
  const std::size_t index[] = {0};
  const auto charts = model.encode(make_batch(one, index));
  const std::size_t n = sentence.size();
  std::map<std::pair<std::size_t, std::size_t>, std::vector<long double>> cell;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = charts[0].value({i, i});
    cell[{i, i}] = std::vector<long double>(v.begin(), v.end());
  }
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, long double> expected;
  for (std::size_t h = 2; h <= 4; ++h) {
    for (std::size_t i = 0; i + h <= n; ++i) {
      const std::size_t j = i + h - 1;
      std::vector<std::vector<long double>> cands;
      std::vector<long double> scores;
      for (std::size_t k = i; k < j; ++k) {
        const auto& l = cell[{i, k}];
        const auto& rr = cell[{k + 1, j}];
        std::vector<long double> c(d);
        for (std::size_t o = 0; o < d; ++o) {
          long double acc = b[o];
          for (std::size_t x = 0; x < d; ++x) {
            acc += static_cast<long double>(W[o * 2 * d + x]) * l[x] +
                   static_cast<long double>(W[o * 2 * d + d + x]) * rr[x];
          }
          c[o] = acc;
        }
        long double s = 0;
        for (std::size_t o = 0; o < d; ++o) {
          long double qc = 0;
          for (std::size_t x = 0; x < d; ++x) qc += static_cast<long double>(Q[o * d + x]) * c[x];
          s += qc * kw[o];
        }
        scores.push_back(s / std::sqrt(static_cast<long double>(d)));
        cands.push_back(std::move(c));
      }
      const long double top = *std::max_element(scores.begin(), scores.end());
      long double z = 0;
      for (auto& s : scores) z += (s = std::exp(s - top));
      std::vector<long double> pooled(d, 0);
      for (std::size_t k = 0; k < scores.size(); ++k) {
        expected[{i + 1, j + 1, i + k + 1}] = scores[k] / z;
        for (std::size_t o = 0; o < d; ++o) pooled[o] += scores[k] / z * cands[k][o];
      }
      cell[{i, j}] = pooled;
    }
  }

  ASSERT_EQ(printed.size(), expected.size());
  std::map<std::pair<std::size_t, std::size_t>, double> sums;
  for (const Weight& p : printed) {
    sums[{p.i, p.j}] += p.w;
    EXPECT_NEAR(p.w, static_cast<double>(expected.at({p.i, p.j, p.k})), 1e-5)
        << p.i << " " << p.j << " " << p.k;
  }
  for (const auto& [span, total] : sums) {
    EXPECT_NEAR(total, 1.0, 1e-6) << span.first << " " << span.second;
  }
}

TEST_F(CliInspect, RejectsOverlengthAndForeignTokens) {
  expect_error(run("inspect --checkpoint " + checkpoint_ + " \"" + std::string(13, '(') + "\""),
               "contract");
  expect_error(run("inspect --checkpoint " + checkpoint_ + " \"(x)\""), "format");
}

TEST_F(Cli, SweepEmitsOneRowPerValueReproducibleFromCheckpoints) {
  const auto config = write("c.cfg", std::string(kTinyDyck) + "steps = 6\neval_every = 3\n");
  struct Case {
    std::string axis;
    std::string values;
    std::size_t rows;
  };
  for (const Case& c : {Case{"height", "1,2,4,6,8", 5}, Case{"depth", "0,1,2", 3}}) {
    const auto out = mkdir(c.axis);
    const Result r = run("sweep --config " + config.string() + " --axis " + c.axis + " --values " +
                      c.values + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(out / "sweep.csv").substr(0, c.axis.size() + 1), c.axis + ",");
    std::istringstream lines(slurp(out / "sweep.csv"));
    std::string line;
    std::getline(lines, line);
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      const auto last = line.rfind(',');
      const double metric = std::stod(line.substr(line.find(',') + 1));
      const Result e = run("eval --checkpoint " + line.substr(last + 1));
      ASSERT_EQ(e.code, 0) << e.err;
      EXPECT_NEAR(field(e.out, "metric"), metric, 1e-9) << line;
    }
    EXPECT_EQ(rows, c.rows);
  }
  expect_error(run("sweep --config " + config.string() + " --axis width --out " +
                   path("height").string()),
               "config");
}

}  // namespace
}  // namespace treeformer
