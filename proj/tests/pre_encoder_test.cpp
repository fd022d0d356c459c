#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "treeformer/params.hpp"
#include "treeformer/pre_encoder.hpp"

namespace treeformer {
namespace {

using testing::max_abs_diff;
using Mat = std::vector<std::vector<long double>>;

PreEncoderConfig config_of(std::size_t d, std::size_t heads, std::size_t layers) {
  PreEncoderConfig c;
  c.vocab_size = 9;
  c.dim = d;
  c.heads = heads;
  c.layers = layers;
  c.ffn = 2 * d;
  return c;
}

// Randomises every gain/shift/bias so the oracle sees nontrivial values.
void perturb(PreEncoderParams& p, Rng& rng) {
  ParamStore store;
  p.register_into(store, "");
  for (const auto& [name, t] : store.entries()) {
    for (auto& v : Tensor(t).mutable_data()) {
      v = static_cast<Real>(v + rng.uniform(-0.3, 0.3));
    }
  }
}

Mat to_mat(const Tensor& t) {
  Mat m(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    m[r].assign(t.row(r).begin(), t.row(r).end());
  }
  return m;
}

// y = x W^T + b
Mat affine(const Mat& x, const LinearParams& p) {
  const std::size_t out = p.weight.shape()[0];
  Mat y(x.size(), std::vector<long double>(out));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      long double acc = p.bias.data()[o];
      for (std::size_t k = 0; k < x[r].size(); ++k) {
        acc += x[r][k] * p.weight.at(o, k);
      }
      y[r][o] = acc;
    }
  }
  return y;
}

Mat norm(const Mat& x, const NormParams& p) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const std::size_t d = x[r].size();
    long double mu = 0;
    for (auto v : x[r]) {
      mu += v / d;
    }
    long double var = 0;
    for (auto v : x[r]) {
      var += (v - mu) * (v - mu) / d;
    }
    for (std::size_t j = 0; j < d; ++j) {
      y[r][j] = (x[r][j] - mu) / std::sqrt(var + 1e-5L) * p.gain.data()[j] + p.shift.data()[j];
    }
  }
  return y;
}

Mat add(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t j = 0; j < a[r].size(); ++j) {
      y[r][j] += b[r][j];
    }
  }
  return y;
}

// Single-head post-norm encoder layer written directly from the formulas.
Mat oracle_layer(const Mat& x, const EncoderLayerParams& p, Mat* probs) {
  const Mat q = affine(x, p.attention.query);
  const Mat k = affine(x, p.attention.key);
  const Mat v = affine(x, p.attention.value);
  const std::size_t n = x.size();
  const std::size_t d = x[0].size();
  Mat att(n, std::vector<long double>(d, 0));
  probs->assign(n, std::vector<long double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t c = 0; c < d; ++c) {
        s += q[i][c] * k[j][c];
      }
      (*probs)[i][j] = std::exp(s / std::sqrt(static_cast<long double>(d)));
      z += (*probs)[i][j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      (*probs)[i][j] /= z;
      for (std::size_t c = 0; c < d; ++c) {
        att[i][c] += (*probs)[i][j] * v[j][c];
      }
    }
  }
  const Mat h = norm(add(x, affine(att, p.attention.output)), p.norm1);
  Mat inner = affine(h, p.ffn.inner);
  for (auto& row : inner) {
    for (auto& e : row) {
      e = std::max(e, 0.0L);
    }
  }
  return norm(add(h, affine(inner, p.ffn.outer)), p.norm2);
}

TEST(Embed, SameTokenDiffersByPosition) {
  const PreEncoderConfig config = config_of(8, 2, 0);
  Rng rng(1);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {4, 4};
  const std::size_t offsets[] = {0, 2};
  const Tensor x = embed(ids, offsets, config, p);
  EXPECT_GT(max_abs_diff(x.row(0), x.row(1)), 1e-3);
}

TEST(Embed, WithoutPositionsSameTokenSameVector) {
  PreEncoderConfig config = config_of(8, 2, 0);
  config.positional = false;
  Rng rng(2);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {4, 4, 4};
  const std::size_t offsets[] = {0, 3};
  const Tensor x = embed(ids, offsets, config, p);
  EXPECT_EQ(max_abs_diff(x.row(0), x.row(2)), 0.0);
  EXPECT_EQ(max_abs_diff(x.row(0), p.embedding.row(4)), 0.0);
}

TEST(Embed, PositionsRestartPerSequence) {
  const PreEncoderConfig config = config_of(6, 1, 0);
  Rng rng(3);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {5, 3, 5};
  const std::size_t offsets[] = {0, 2, 3};
  const Tensor x = embed(ids, offsets, config, p);
  EXPECT_EQ(max_abs_diff(x.row(0), x.row(2)), 0.0);
}

TEST(Embed, SinusoidalTableValues) {
  const Tensor pe = sinusoidal_positions(3, 4);
  EXPECT_NEAR(pe.at(0, 0), 0.0, 1e-7);
  EXPECT_NEAR(pe.at(0, 1), 1.0, 1e-7);
  EXPECT_NEAR(pe.at(2, 0), std::sin(2.0), 1e-6);
  EXPECT_NEAR(pe.at(2, 3), std::cos(2.0 / 100.0), 1e-6);
}

TEST(Embed, OutOfRangeIdIsIndexError) {
  const PreEncoderConfig config = config_of(4, 1, 0);
  Rng rng(4);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {9};
  const std::size_t offsets[] = {0, 1};
  try {
    embed(ids, offsets, config, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::index);
  }
}

TEST(SelfAttentionLayer, MatchesSingleHeadOracle) {
  const PreEncoderConfig config = config_of(4, 1, 1);
  Rng rng(5);
  PreEncoderParams p = PreEncoderParams::init(config, rng);
  perturb(p, rng);
  const Tensor x = testing::random_tensor({3, 4}, rng);
  const std::size_t offsets[] = {0, 3};
  std::vector<Real> probs;
  const Tensor y = self_attention_layer(x, offsets, config, p.layers[0], {}, &probs);
  Mat oracle_probs;
  const Mat expected = oracle_layer(to_mat(x), p.layers[0], &oracle_probs);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(y.at(r, c), static_cast<double>(expected[r][c]), 1e-6);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(probs[r * 3 + j], static_cast<double>(oracle_probs[r][j]), 1e-6);
    }
  }
}

TEST(SelfAttentionLayer, SingleTokenAttendsToItself) {
  const PreEncoderConfig config = config_of(8, 2, 1);
  Rng rng(6);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const Tensor x = testing::random_tensor({1, 8}, rng);
  const std::size_t offsets[] = {0, 1};
  std::vector<Real> probs;
  const Tensor y = self_attention_layer(x, offsets, config, p.layers[0], {}, &probs);
  ASSERT_EQ(probs.size(), 2u);
  EXPECT_EQ(probs[0], 1);
  EXPECT_EQ(probs[1], 1);
  for (Real v : y.data()) {
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(SelfAttentionLayer, ProbabilityRowsSumToOne) {
  const PreEncoderConfig config = config_of(8, 4, 2);
  Rng rng(7);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {3, 4, 5, 6, 3, 4, 5, 6, 7};
  const std::size_t offsets[] = {0, 5, 9};
  std::vector<std::vector<Real>> attention;
  PreEncodeOptions options;
  options.attention = &attention;
  pre_encode(ids, offsets, config, p, options);
  ASSERT_EQ(attention.size(), 2u);
  // Segment 0: 4 heads x 5 x 5, then segment 1: 4 heads x 4 x 4.
  for (const auto& probs : attention) {
    ASSERT_EQ(probs.size(), 4u * 25 + 4u * 16);
    std::size_t at = 0;
    for (std::size_t n : {5u, 4u}) {
      for (std::size_t row = 0; row < 4 * n; ++row) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_GE(probs[at], 0);
          total += probs[at++];
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(PreEncode, ZeroLayersIsEmbed) {
  const PreEncoderConfig config = config_of(8, 2, 0);
  Rng rng(8);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {3, 8, 5};
  const std::size_t offsets[] = {0, 3};
  EXPECT_EQ(max_abs_diff(pre_encode(ids, offsets, config, p).data(), embed(ids, offsets, config, p).data()),
            0.0);
}

TEST(PreEncode, TwoLayersTraceShapes) {
  const PreEncoderConfig config = config_of(8, 2, 2);
  Rng rng(9);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {3, 8, 5, 4};
  const std::size_t offsets[] = {0, 1, 4};
  std::vector<Tensor> trace;
  PreEncodeOptions options;
  options.trace = &trace;
  const Tensor out = pre_encode(ids, offsets, config, p, options);
  ASSERT_EQ(trace.size(), 3u);
  for (const Tensor& t : trace) {
    EXPECT_EQ(t.shape(), (Shape{4, 8}));
  }
  EXPECT_TRUE(trace.back().same_node(out));
}

TEST(PreEncode, EvalModeIsDeterministic) {
  PreEncoderConfig config = config_of(8, 2, 2);
  config.dropout = 0.2;
  Rng rng(10);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId ids[] = {3, 8, 5, 4, 4};
  const std::size_t offsets[] = {0, 5};
  const Tensor a = pre_encode(ids, offsets, config, p);
  const Tensor b = pre_encode(ids, offsets, config, p);
  EXPECT_EQ(max_abs_diff(a.data(), b.data()), 0.0);
}

TEST(PreEncode, SequencesDoNotSeeEachOther) {
  const PreEncoderConfig config = config_of(8, 2, 2);
  Rng rng(11);
  const PreEncoderParams p = PreEncoderParams::init(config, rng);
  const TokenId together[] = {3, 8, 5, 4, 6};
  const std::size_t both[] = {0, 3, 5};
  const std::size_t first[] = {0, 3};
  const Tensor joint = pre_encode(together, both, config, p);
  const Tensor alone = pre_encode(std::span<const TokenId>(together, 3), first, config, p);
  EXPECT_LE(max_abs_diff(slice_rows(joint, 0, 3).data(), alone.data()), 1e-6);
}

TEST(PreEncoderConfig, HeadsMustDivideDimension) {
  try {
    config_of(6, 4, 1).validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

}  // namespace
}  // namespace treeformer
