// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dropping/errors.hpp"
#include "dropping/model.hpp"
#include "gradient_suite.hpp"

namespace dropping {
namespace {

using testing::random_tensor;
using Vec = std::vector<double>;

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scalar-loop GRU cell written from the cell equations, independent of the library's matmul.
Vec oracle_gru(const Vec& x, const Vec& h, const GruLayerParams& p) {
  const std::size_t H = h.size();
  auto lin = [&](const Tensor& w, const Vec& in, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * w.at(i, j);
    return s;
  };
  Vec z(H), r(H), rh(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = sig(lin(p.w_z, x, j) + lin(p.u_z, h, j) + p.b_z[j]);
    r[j] = sig(lin(p.w_r, x, j) + lin(p.u_r, h, j) + p.b_r[j]);
  }
  for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < H; ++j) {
    const double cand = std::tanh(lin(p.w_h, x, j) + lin(p.u_h, rh, j) + p.b_h[j]);
    out[j] = (1.0 - z[j]) * h[j] + z[j] * cand;
  }
  return out;
}

Vec embedding_row(const Tensor& e, std::size_t id) {
  Vec v(e.cols());
  for (std::size_t j = 0; j < e.cols(); ++j) v[j] = e.at(id, j);
  return v;
}

void expect_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

ModelConfig small(std::size_t layers = 1, bool bi = false, AttentionMode att = AttentionMode::none) {
  ModelConfig c;
  c.vocab_size = 9;
  c.embed_dim = 4;
  c.hidden_size = 3;
  c.layers = layers;
  c.bidirectional = bi;
  c.attention = att;
  c.classes = 3;
  c.dropout = 0.2;
  return c;
}

TEST(GruStep, ZeroParamsZeroState) {
  const auto p = GruLayerParams::zeros(2, 3);
  EXPECT_EQ(gru_step(Tensor::row({0.4, -0.2}), Tensor::zeros(1, 3), p), Tensor::zeros(1, 3));
}

TEST(GruStep, ZeroParamsHalvesState) {
  const auto p = GruLayerParams::zeros(2, 3);
  const Tensor h = Tensor::row({0.2, -0.6, 0.9});
  const Tensor out = gru_step(Tensor::row({1.0, 1.0}), h, p);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out[j], 0.5 * h[j]);
}

TEST(GruStep, ScalarHandEvaluation) {
  auto p = GruLayerParams::zeros(1, 1);
  p.w_h[0] = 1.0;
  const Tensor out = gru_step(Tensor::row({1.0}), Tensor::zeros(1, 1), p);
  EXPECT_NEAR(out[0], 0.5 * std::tanh(1.0), 1e-15);
  EXPECT_NEAR(out[0], 0.3808, 5e-5);
}

TEST(GruStep, MatchesScalarOracleAndStaysBounded) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = GruLayerParams::xavier(4, 3, rng);
    p.b_z = random_tensor(1, 3, rng);
    p.b_r = random_tensor(1, 3, rng);
    p.b_h = random_tensor(1, 3, rng);
    const Tensor x = random_tensor(1, 4, rng, -3, 3);
    const Tensor h = random_tensor(1, 3, rng, -0.99, 0.99);
    const Tensor out = gru_step(x, h, p);
    expect_near(out.values(), oracle_gru(x.values(), h.values(), p), 1e-14);
    for (double v : out.values()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(GruStep, DimensionMismatchIsShapeError) {
  const auto p = GruLayerParams::zeros(2, 3);
  EXPECT_THROW(gru_step(Tensor::row({1.0}), Tensor::zeros(1, 3), p), ShapeError);
  EXPECT_THROW(gru_step(Tensor::row({1.0, 2.0}), Tensor::zeros(1, 2), p), ShapeError);
}

TEST(EncodeSequence, LengthOneIsOneStepFromZero) {
  std::mt19937_64 rng(1);
  const PairModel m(small(), rng);
  const auto states = encode_sequence({5}, m, 0, rng, false);
  ASSERT_EQ(states.size(), 1u);
  const auto& enc = m.encoder(0);
  expect_near(states[0].values(), oracle_gru(embedding_row(enc.embedding, 5), Vec(3, 0.0), enc.forward[0]), 1e-14);
}

TEST(EncodeSequence, ThreeTokensComposeSteps) {
  std::mt19937_64 rng(2);
  const PairModel m(small(), rng);
  const std::vector<std::size_t> tokens{3, 1, 7};
  const auto states = encode_sequence(tokens, m, 0, rng, false);
  const auto& enc = m.encoder(0);
  Vec h(3, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    h = oracle_gru(embedding_row(enc.embedding, tokens[t]), h, enc.forward[0]);
    expect_near(states[t].values(), h, 1e-14);
  }
}

TEST(EncodeSequence, TwoLayerStackFeedsStates) {
  std::mt19937_64 rng(3);
  const PairModel m(small(2), rng);
  const std::vector<std::size_t> tokens{2, 4};
  const auto states = encode_sequence(tokens, m, 0, rng, false);
  const auto& enc = m.encoder(0);
  Vec h1(3, 0.0), h2(3, 0.0);
  for (std::size_t t = 0; t < 2; ++t) {
    h1 = oracle_gru(embedding_row(enc.embedding, tokens[t]), h1, enc.forward[0]);
    h2 = oracle_gru(h1, h2, enc.forward[1]);
    expect_near(states[t].values(), h2, 1e-14);
  }
}

TEST(EncodeSequence, BidirectionalWidthAndHalves) {
  std::mt19937_64 rng(4);
  const PairModel m(small(1, true), rng);
  const std::vector<std::size_t> tokens{1, 2, 3, 4};
  const auto states = encode_sequence(tokens, m, 0, rng, false);
  const auto& enc = m.encoder(0);
  ASSERT_EQ(states.size(), 4u);
  for (const auto& s : states) EXPECT_EQ(s.size(), 6u);
  Vec hf(3, 0.0), hb(3, 0.0);
  std::vector<Vec> fw(4), bw(4);
  for (std::size_t t = 0; t < 4; ++t) fw[t] = hf = oracle_gru(embedding_row(enc.embedding, tokens[t]), hf, enc.forward[0]);
  for (std::size_t t = 4; t-- > 0;) bw[t] = hb = oracle_gru(embedding_row(enc.embedding, tokens[t]), hb, enc.backward[0]);
  for (std::size_t t = 0; t < 4; ++t) {
    Vec joined = fw[t];
    joined.insert(joined.end(), bw[t].begin(), bw[t].end());
    expect_near(states[t].values(), joined, 1e-14);
  }
}

TEST(EncodeSequence, PalindromeWithMirroredDirections) {
  std::mt19937_64 rng(5);
  PairModel m(small(1, true), rng);
  m.encoder(0).backward[0] = m.encoder(0).forward[0];
  const std::vector<std::size_t> tokens{6, 2, 8, 2, 6};
  const auto states = encode_sequence(tokens, m, 0, rng, false);
  const std::size_t n = tokens.size();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(states[t][j], states[n - 1 - t][3 + j]);
  }
}

TEST(EncodeSequence, EmptyAndUnknownTokensAreInputErrors) {
  std::mt19937_64 rng(6);
  const PairModel m(small(), rng);
  EXPECT_THROW(encode_sequence({}, m, 0, rng, false), InputError);
  EXPECT_THROW(encode_sequence({1, 9}, m, 0, rng, false), InputError);
}

TEST(EncodeSequence, DropoutOnlyBetweenLayersInTraining) {
  std::mt19937_64 rng(7);
  ModelConfig c = small(1);
  c.dropout = 0.9;
  const PairModel one(c, rng);
  std::mt19937_64 a(1), b(2);
  // A single layer has no inter-layer dropout, so training mode is a pure forward pass.
  EXPECT_EQ(encode_sequence({1, 2, 3}, one, 0, a, true), encode_sequence({1, 2, 3}, one, 0, b, false));
  c.layers = 2;
  const PairModel two(c, rng);
  std::mt19937_64 d(3);
  EXPECT_NE(encode_sequence({1, 2, 3}, two, 0, d, true), encode_sequence({1, 2, 3}, two, 0, d, false));
}

TEST(Attend, SingleSourceState) {
  const Tensor src = Tensor::matrix({{0.3, -0.7}});
  const auto st = attend(Tensor::row({1.0, 2.0}), src, Tensor({4, 2}));
  EXPECT_DOUBLE_EQ(st.alpha[0], 1.0);
  EXPECT_EQ(st.context, Tensor::row({0.3, -0.7}));
}

TEST(Attend, IdenticalSourcesUniform) {
  const Tensor src = Tensor::matrix({{0.5, 0.1}, {0.5, 0.1}, {0.5, 0.1}});
  const auto st = attend(Tensor::row({2.0, -1.0}), src, Tensor({4, 2}));
  for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(st.alpha[s], 1.0 / 3.0, 1e-15);
}

TEST(Attend, DotScoreExample) {
  const auto st = attend(Tensor::row({1.0, 0.0}), Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), Tensor({4, 2}));
  const double a0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(st.alpha[0], a0, 1e-15);
  EXPECT_NEAR(st.alpha[1], 1.0 - a0, 1e-15);
  EXPECT_NEAR(st.context[0], a0, 1e-15);
  EXPECT_NEAR(st.context[1], 1.0 - a0, 1e-15);
  EXPECT_NEAR(a0, 0.7311, 5e-5);
}

TEST(Attend, OutputCombinesContextAndTarget) {
  std::mt19937_64 rng(9);
  const Tensor w = random_tensor(4, 2, rng);
  const Tensor h = Tensor::row({0.2, -0.4});
  const Tensor src = Tensor::matrix({{1.0, 0.5}, {-0.3, 0.8}});
  const auto st = attend(h, src, w);
  const Vec joined{st.context[0], st.context[1], h[0], h[1]};
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += joined[i] * w.at(i, j);
    EXPECT_NEAR(st.output[j], std::tanh(s), 1e-15);
  }
}

TEST(Attend, RowsNormaliseAndContextInConvexHull) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 6;
    const Tensor src = random_tensor(n, 3, rng, -2, 2);
    const auto st = attend(random_tensor(1, 3, rng, -2, 2), src, Tensor({6, 3}));
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) total += st.alpha[s];
    EXPECT_NEAR(total, 1.0, 1e-10);
    for (std::size_t j = 0; j < 3; ++j) {
      double lo = src.at(0, j), hi = lo;
      for (std::size_t s = 1; s < n; ++s) lo = std::min(lo, src.at(s, j)), hi = std::max(hi, src.at(s, j));
      EXPECT_GE(st.context[j], lo - 1e-12);
      EXPECT_LE(st.context[j], hi + 1e-12);
    }
  }
}

TEST(Attend, WidthMismatchIsShapeError) {
  EXPECT_THROW(attend(Tensor::row({1.0, 2.0}), Tensor::matrix({{1.0, 2.0, 3.0}}), Tensor({4, 2})), ShapeError);
}

TEST(ClassifyPair, OutputIsOnSimplex) {
  std::mt19937_64 rng(11);
  for (auto att : {AttentionMode::none, AttentionMode::cross}) {
    for (bool bi : {false, true}) {
      const PairModel m(small(2, bi, att), rng);
      const auto p = predict_pair({1, 2, 3}, {4, 5}, m);
      ASSERT_EQ(p.size(), 3u);
      double total = 0.0;
      for (double v : p) {
        EXPECT_GT(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(ClassifyPair, ZeroHeadIsUniform) {
  std::mt19937_64 rng(12);
  PairModel m(small(2, true, AttentionMode::cross), rng);
  m.w_out().fill(0.0);
  m.b_out().fill(0.0);
  for (double v : predict_pair({1, 2}, {3}, m)) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(ClassifyPair, MatchesIndependentForwardPass) {
  std::mt19937_64 rng(13);
  const PairModel m(small(1), rng);
  const std::vector<std::size_t> s1{1, 4, 2}, s2{7, 3};
  auto encode_last = [&](const std::vector<std::size_t>& toks) {
    Vec h(3, 0.0);
    for (auto id : toks) h = oracle_gru(embedding_row(m.encoder(0).embedding, id), h, m.encoder(0).forward[0]);
    return h;
  };
  const Vec v1 = encode_last(s1), v2 = encode_last(s2);
  Vec feature = v1;
  feature.insert(feature.end(), v2.begin(), v2.end());
  for (std::size_t j = 0; j < 3; ++j) feature.push_back(std::fabs(v1[j] - v2[j]));
  for (std::size_t j = 0; j < 3; ++j) feature.push_back(v1[j] * v2[j]);
  Vec z(3);
  for (std::size_t c = 0; c < 3; ++c) {
    z[c] = m.b_out()[c];
    for (std::size_t i = 0; i < feature.size(); ++i) z[c] += feature[i] * m.w_out().at(i, c);
  }
  const double zmax = std::max({z[0], z[1], z[2]});
  double total = 0.0;
  for (auto& v : z) total += (v = std::exp(v - zmax));
  for (auto& v : z) v /= total;
  expect_near(predict_pair(s1, s2, m), z, 1e-14);
}

TEST(ClassifyPair, SymmetricFusionIsSwapInvariantWhenUntied) {
  std::mt19937_64 rng(14);
  ModelConfig c = small(2, true);
  c.fusion = FusionMode::symmetric;
  c.tied = false;
  PairModel m(c, rng);
  // Untied encoders are only swap-symmetric when they hold the same weights.
  m.encoder(1) = m.encoder(0);
  const std::vector<std::size_t> a{1, 2, 3}, b{8, 6};
  expect_near(predict_pair(a, b, m), predict_pair(b, a, m), 1e-15);
  ModelConfig tied = c;
  tied.tied = true;
  const PairModel t(tied, rng);
  expect_near(predict_pair(a, b, t), predict_pair(b, a, t), 1e-15);
}

TEST(ClassifyPair, DeterministicUnderSeed) {
  auto run = [] {
    std::mt19937_64 rng(15);
    const PairModel m(small(2, true, AttentionMode::cross), rng);
    return classify_pair({1, 2, 3}, {3, 2}, m, rng, true);
  };
  EXPECT_EQ(run(), run());
}

TEST(PairModel, UntiedHasSecondEncoder) {
  std::mt19937_64 rng(16);
  ModelConfig c = small(2);
  c.tied = false;
  PairModel m(c, rng);
  bool saw = false;
  m.for_each_parameter([&](const std::string& name, Tensor&) { saw |= name.rfind("enc2.", 0) == 0; });
  EXPECT_TRUE(saw);
  EXPECT_NE(m.encoder(0).embedding, m.encoder(1).embedding);
}

TEST(PairModel, BiasesStartAtZero) {
  std::mt19937_64 rng(17);
  PairModel m(small(2, true, AttentionMode::cross), rng);
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    if (name.find("b_") != std::string::npos) {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
    }
  });
}

TEST(PairModel, InvalidConfigIsConfigError) {
  std::mt19937_64 rng(18);
  ModelConfig c = small();
  c.layers = 3;
  EXPECT_THROW(PairModel(c, rng), ConfigError);
  c = small();
  c.vocab_size = 0;
  EXPECT_THROW(PairModel(c, rng), ConfigError);
  PairModel m(small(), rng);
  EXPECT_THROW(m.set_dropout(1.0), ConfigError);
}

TEST(PairModel, ResizeHeadChangesClassCount) {
  std::mt19937_64 rng(19);
  PairModel m(small(), rng);
  m.resize_head(5, rng);
  EXPECT_EQ(m.config().classes, 5u);
  EXPECT_EQ(predict_pair({1}, {2}, m).size(), 5u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(20);
  ModelConfig c = small(2, true, AttentionMode::cross);
  c.tied = false;
  c.fusion = FusionMode::symmetric;
  const PairModel m(c, rng);
  std::stringstream ss;
  save_model(m, ss);
  const PairModel back = load_model(ss);
  EXPECT_TRUE(back == m);
  std::stringstream again;
  save_model(back, again);
  EXPECT_EQ(again.str(), ss.str());
}

TEST(Checkpoint, CorruptInputIsInputError) {
  std::stringstream bad("not-a-model 1\n");
  EXPECT_THROW(load_model(bad), InputError);
  std::mt19937_64 rng(21);
  std::stringstream ss;
  save_model(PairModel(small(), rng), ss);
  const std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_model(truncated), InputError);
}

}  // namespace
}  // namespace dropping
