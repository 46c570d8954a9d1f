#include <cmath>

#include <gtest/gtest.h>

#include "geosense/backbone.hpp"
#include "geosense/errors.hpp"
#include "geosense/model.hpp"
#include "geosense/training.hpp"
#include "support.hpp"

using namespace geosense;
using geosense::testing::random_tensor;

namespace {

template <typename T>
AssembledSequence<T> text_only(std::vector<TokenId> ids) {
  AssembledSequence<T> s;
  s.token_ids = std::move(ids);
  s.segments = segments_from_tokens(s.token_ids);
  return s;
}

template <typename T>
void randomize(Backbone<T>& b, std::uint64_t seed, double scale) {
  for (auto* p : b.parameters()) {
    auto r = random_tensor<T>(p->shape(), ++seed, scale);
    std::copy(r.data().begin(), r.data().end(), p->data().begin());
  }
}

using Mat = std::vector<std::vector<double>>;

Mat rows_of(const Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

std::vector<double> vec_of(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

Mat matmul_ref(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat layer_norm_ref(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return y;
}

// Single-layer, single-head decoder written out directly.
Mat reference_logits(const Backbone<double>& m, const std::vector<TokenId>& ids) {
  const auto E = rows_of(m.embedding), P = rows_of(m.positions);
  const auto& b = m.blocks[0];
  const std::size_t n = ids.size(), d = E[0].size();
  Mat x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] = E[static_cast<std::size_t>(ids[i])][j] + P[i][j];

  auto h = layer_norm_ref(x, vec_of(b.ln1_g), vec_of(b.ln1_b));
  const auto q = matmul_ref(h, rows_of(b.wq)), k = matmul_ref(h, rows_of(b.wk)), v = matmul_ref(h, rows_of(b.wv));
  Mat att(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(i + 1);
    double z = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
      w[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
      z += w[j];
    }
    for (std::size_t j = 0; j <= i; ++j)
      for (std::size_t c = 0; c < d; ++c) att[i][c] += w[j] / z * v[j][c];
  }
  const auto o = matmul_ref(att, rows_of(b.wo));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += o[i][j];

  h = layer_norm_ref(x, vec_of(b.ln2_g), vec_of(b.ln2_b));
  auto u = matmul_ref(h, rows_of(b.w1));
  const auto b1 = vec_of(b.b1);
  for (auto& row : u)
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double a = row[j] + b1[j];
      row[j] = 0.5 * a * (1 + std::tanh(std::sqrt(2 / M_PI) * (a + 0.044715 * a * a * a)));
    }
  const auto f = matmul_ref(u, rows_of(b.w2));
  const auto b2 = vec_of(b.b2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += f[i][j] + b2[j];

  h = layer_norm_ref(x, vec_of(m.lnf_g), vec_of(m.lnf_b));
  Mat logits(n, std::vector<double>(E.size(), 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < E.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) logits[i][t] += h[i][j] * E[t][j];
  return logits;
}

BackboneConfig small_config() {
  BackboneConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 4;
  c.max_len = 32;
  return c;
}

}  // namespace

TEST(Forward, SingleTokenShape) {
  Backbone<float> m(small_config());
  Tape<float> tape(false);
  EXPECT_EQ(m.forward(tape, text_only<float>({tok::kBos})).shape(), (Shape{1, tok::kVocabSize}));
}

TEST(Forward, MatchesHandRolledSingleLayer) {
  BackboneConfig c;
  c.vocab_size = 8;
  c.d_model = 4;
  c.layers = 1;
  c.heads = 1;
  c.max_len = 8;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Backbone<double> m(c);
    randomize(m, 40 + s * 100, 0.7);
    const std::vector<TokenId> ids{0, 2, 7, 1, 2, 5};
    Tape<double> tape(false);
    const auto logits = m.forward(tape, text_only<double>(ids));
    const auto ref = reference_logits(m, ids);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR(logits.at(i, t), ref[i][t], 1e-5);
  }
}

TEST(Forward, CausalUnderFuturePerturbation) {
  Backbone<float> m(small_config());
  randomize(m, 3, 0.3);
  Tape<float> tape(false);
  std::vector<TokenId> ids{0, 9, 14, 15, 22, 23, 2, 30};
  const auto base = m.forward(tape, text_only<float>(ids));
  for (std::size_t cut = 1; cut < ids.size(); ++cut) {
    auto changed = ids;
    for (std::size_t j = cut; j < ids.size(); ++j) changed[j] = (changed[j] + 11) % tok::kVocabSize;
    const auto other = m.forward(tape, text_only<float>(changed));
    for (std::size_t i = 0; i < cut; ++i)
      for (std::size_t t = 0; t < base.cols(); ++t) ASSERT_EQ(base.at(i, t), other.at(i, t));
  }
}

TEST(Forward, OverrideOfOwnEmbeddingIsBitIdentical) {
  Backbone<float> m(small_config());
  randomize(m, 5, 0.3);
  Tape<float> tape(false);
  auto seq = text_only<float>({0, 9, 14, 17, 2});
  const auto base = m.forward(tape, seq);
  auto row = Tensor<float>::zeros({1, 16});
  for (std::size_t j = 0; j < 16; ++j) row.at(0, j) = m.embedding.at(14, j);
  seq.overrides.push_back({Segment::Vision, {2}, row});
  const auto over = m.forward(tape, seq);
  EXPECT_TRUE(std::equal(base.data().begin(), base.data().end(), over.data().begin()));
}

TEST(Forward, OverlengthIsCapacityError) {
  Backbone<float> m(small_config());
  Tape<float> tape(false);
  EXPECT_THROW(m.forward(tape, text_only<float>(std::vector<TokenId>(33, tok::kBos))), CapacityError);
}

TEST(Forward, HeadsMustDivideWidth) {
  auto c = small_config();
  c.heads = 3;
  EXPECT_THROW(Backbone<float>{c}, ConfigError);
}

TEST(TriggerConfidence, UniformOverThirtyTwo) {
  std::vector<float> row(32, 0.0f);
  EXPECT_NEAR(trigger_confidence<float>(row), 0.03125, 1e-9);
}

TEST(TriggerConfidence, LargeMarginSaturates) {
  std::vector<float> row(tok::kVocabSize, 0.0f);
  row[tok::kTrigger] = 20.0f;
  EXPECT_GT(trigger_confidence<float>(row), 0.999);
}

TEST(TriggerConfidence, MatchesSoftmaxOracle) {
  const auto r = random_tensor<double>({tok::kVocabSize}, 17, 2.0);
  long double z = 0;
  for (double x : r.data()) z += std::exp(static_cast<long double>(x));
  const double ref = static_cast<double>(std::exp(static_cast<long double>(r.data()[tok::kTrigger])) / z);
  EXPECT_NEAR(trigger_confidence<double>(r.data()), ref, 1e-14);
}

TEST(Argmax, TiesGoToLowestId) {
  std::vector<float> row{0.0f, 3.0f, 1.0f, 3.0f};
  EXPECT_EQ(argmax_token<float>(row), 1);
}

TEST(Generate, ForcedEosStopsImmediately) {
  Backbone<float> m(small_config());
  // Final norm pinned to an oversized EOS row, so EOS wins every position.
  for (std::size_t j = 0; j < 16; ++j) {
    m.embedding.at(tok::kEos, j) *= 50.0f;
    m.lnf_g.data()[j] = 0.0f;
    m.lnf_b.data()[j] = m.embedding.at(tok::kEos, j);
  }
  const auto out = generate(m, text_only<float>({tok::kBos, 9}), 5);
  EXPECT_EQ(out, (std::vector<TokenId>{tok::kEos}));
}

TEST(Generate, DeterministicAndMatchesStepwiseOracle) {
  Backbone<float> m(small_config());
  randomize(m, 21, 0.4);
  const std::vector<TokenId> prefix{tok::kBos, 9, 14, 15, tok::kTurnSep};
  const auto out = generate(m, text_only<float>(prefix), 6);
  EXPECT_EQ(out, generate(m, text_only<float>(prefix), 6));

  std::vector<TokenId> ids = prefix, expect;
  for (int step = 0; step < 6; ++step) {
    Tape<float> tape(false);
    const auto logits = m.forward(tape, text_only<float>(ids));
    const auto last = logits.data().subspan((ids.size() - 1) * logits.cols(), logits.cols());
    TokenId best = 0;
    for (TokenId t = 1; t < static_cast<TokenId>(last.size()); ++t)
      if (last[static_cast<std::size_t>(t)] > last[static_cast<std::size_t>(best)]) best = t;
    expect.push_back(best);
    ids.push_back(best);
    if (best == tok::kEos) break;
  }
  EXPECT_EQ(out, expect);
}

TEST(Generate, StopSetIncludesStopId) {
  Backbone<float> m(small_config());
  for (std::size_t j = 0; j < 16; ++j) {
    m.embedding.at(tok::kTrigger, j) *= 50.0f;
    m.lnf_g.data()[j] = 0.0f;
    m.lnf_b.data()[j] = m.embedding.at(tok::kTrigger, j);
  }
  const TokenId stop[] = {tok::kEos, tok::kTrigger};
  EXPECT_EQ(generate(m, text_only<float>({tok::kBos}), 4, std::span<const TokenId>(stop)),
            (std::vector<TokenId>{tok::kTrigger}));
}

TEST(GradientFlow, ReachesProjectorsAndBoundaryEmbeddings) {
  auto cfg = geosense::testing::tiny_model_config();
  Model model(cfg);
  const auto scene = generate_scene(4, TaskKind::GeoRequired, cfg.world);
  const auto sample = answer_only_sample(scene, cfg.world, Variant::Adaptive, true);
  Tape<float> tape;
  tape.backward(sample_loss(tape, model, sample));
  auto nonzero = [](std::span<const float> g) {
    return std::any_of(g.begin(), g.end(), [](float x) { return x != 0.0f; });
  };
  EXPECT_TRUE(nonzero(model.projectors.w2d.grad()));
  EXPECT_TRUE(nonzero(model.projectors.w3d.grad()));
  const auto d = static_cast<std::size_t>(cfg.backbone.d_model);
  for (TokenId b : {tok::kGeoStart, tok::kGeoEnd})
    EXPECT_TRUE(nonzero(model.backbone.embedding.grad().subspan(static_cast<std::size_t>(b) * d, d)));
  EXPECT_FALSE(model.vision_encoder.weights().has_grad() && nonzero(model.vision_encoder.weights().grad()));
  EXPECT_FALSE(model.geometry_encoder.weights().has_grad() && nonzero(model.geometry_encoder.weights().grad()));
}
