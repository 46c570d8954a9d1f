#include <gtest/gtest.h>

#include "geosense/errors.hpp"
#include "geosense/sequence.hpp"
#include "sequence_props.hpp"
#include "support.hpp"

using namespace geosense;
using geosense::testing::random_tensor;

namespace {

Tape<float> no_tape(false);

Tensor<float> identity(std::size_t n) {
  auto t = Tensor<float>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

// 5 text ids around 4 vision placeholders.
std::vector<TokenId> example_text() {
  return {tok::kBos, tok::background(1), tok::kVisionPad, tok::kVisionPad, tok::kVisionPad,
          tok::kVisionPad, tok::kCount, tok::kTurnSep, tok::number(2)};
}

}  // namespace

TEST(Project, IdentityProjectorPassesThrough) {
  Projectors<float> p{identity(3), identity(3)};
  const FeatureSeq<float> f{random_tensor<float>({4, 3}, 1), Channel::Geometry};
  const auto out = project(no_tape, f, p);
  EXPECT_TRUE(geosense::testing::rows_equal(out.data(), f.tokens.data()));
}

TEST(Project, ZeroProjectorGivesZeros) {
  Projectors<float> p{Tensor<float>::zeros({3, 5}), Tensor<float>::zeros({3, 5})};
  const auto out = project(no_tape, FeatureSeq<float>{random_tensor<float>({2, 3}, 2), Channel::Vision}, p);
  EXPECT_EQ(out.shape(), (Shape{2, 5}));
  for (float x : out.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Project, MatchesProductOracle) {
  const auto p = Projectors<float>::init(4, 6, 5, 3);
  const auto x = random_tensor<float>({3, 6}, 4);
  const auto out = project(no_tape, FeatureSeq<float>{x, Channel::Geometry}, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 6; ++k) ref += static_cast<double>(x.at(i, k)) * p.w3d.at(k, j);
      EXPECT_NEAR(out.at(i, j), ref, 1e-5);
    }
}

TEST(Project, WidthMismatchIsDimensionError) {
  const auto p = Projectors<float>::init(4, 6, 5, 3);
  EXPECT_THROW(project(no_tape, FeatureSeq<float>{random_tensor<float>({3, 4}, 1), Channel::Geometry}, p),
               DimensionError);
}

TEST(Project, ProjectorsAreTrainable) {
  const auto p = Projectors<float>::init(4, 6, 8, 3);
  EXPECT_TRUE(p.w2d.requires_grad());
  EXPECT_TRUE(p.w3d.requires_grad());
  EXPECT_EQ(p.w2d.shape(), (Shape{4, 8}));
  EXPECT_EQ(p.w3d.shape(), (Shape{6, 8}));
}

TEST(Assemble, TextAndVisionOnly) {
  const auto seq = assemble<float>(example_text(), random_tensor<float>({4, 3}, 1), std::nullopt);
  EXPECT_EQ(seq.size(), 9u);
  EXPECT_FALSE(seq.has_geometry());
  for (auto s : seq.segments) EXPECT_TRUE(s == Segment::Text || s == Segment::Vision);
}

TEST(Assemble, GeometrySegmentPlacement) {
  const auto seq = assemble<float>(example_text(), random_tensor<float>({4, 3}, 1),
                                   random_tensor<float>({3, 3}, 2));
  ASSERT_EQ(seq.size(), 14u);
  EXPECT_EQ(seq.token_ids[9], tok::kGeoStart);
  EXPECT_EQ(seq.token_ids[13], tok::kGeoEnd);
  EXPECT_EQ(seq.segments[9], Segment::GeoStart);
  EXPECT_EQ(seq.segments[13], Segment::GeoEnd);
  for (std::size_t i = 10; i < 13; ++i) EXPECT_EQ(seq.segments[i], Segment::Geo);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_LT(static_cast<int>(seq.segments[i]), static_cast<int>(Segment::GeoStart));
}

TEST(Assemble, PlaceholderMismatchReportsCounts) {
  auto text = example_text();
  text.erase(text.begin() + 2);
  try {
    assemble<float>(text, random_tensor<float>({4, 3}, 1), std::nullopt);
    FAIL() << "expected AssemblyError";
  } catch (const AssemblyError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 4"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("found 3"), std::string::npos) << e.what();
  }
}

TEST(Assemble, GeometryIdsInTextRejected) {
  auto text = example_text();
  text.push_back(tok::kGeoStart);
  EXPECT_THROW(assemble<float>(text, random_tensor<float>({4, 3}, 1), std::nullopt), AssemblyError);
}

TEST(AppendText, RejectsPlaceholders) {
  auto seq = assemble<float>(example_text(), random_tensor<float>({4, 3}, 1), std::nullopt);
  const TokenId ok[] = {tok::kNeed, tok::kEos};
  append_text(seq, std::span<const TokenId>(ok));
  EXPECT_EQ(seq.size(), 11u);
  EXPECT_EQ(seq.segments, segments_from_tokens(seq.token_ids));
  const TokenId pad[] = {tok::kVisionPad};
  EXPECT_THROW(append_text(seq, std::span<const TokenId>(pad)), AssemblyError);
}

TEST(Suppress, ZeroesGeometryAndKeepsLength) {
  const auto seq = assemble<float>(example_text(), random_tensor<float>({4, 3}, 1),
                                   random_tensor<float>({3, 3}, 2));
  const auto sup = suppress_geometry(seq);
  EXPECT_EQ(sup.size(), seq.size());
  for (std::size_t i = 10; i < 13; ++i)
    for (float x : sup.override_at(i)) EXPECT_EQ(x, 0.0f);
  for (std::size_t i = 0; i < 9; ++i)
    EXPECT_TRUE(geosense::testing::rows_equal(sup.override_at(i), seq.override_at(i)));
}

TEST(Suppress, WithoutGeometryIsContractError) {
  const auto seq = assemble<float>(example_text(), random_tensor<float>({4, 3}, 1), std::nullopt);
  EXPECT_THROW(suppress_geometry(seq), ContractError);
}

TEST(Fused, ZeroGeometryEqualsPlainValues) {
  const auto v = random_tensor<float>({4, 3}, 1);
  const auto fused = assemble_fused<float>(no_tape, example_text(), v, Tensor<float>::zeros({4, 3}));
  const auto plain = assemble<float>(example_text(), v, std::nullopt);
  EXPECT_EQ(fused.size(), 9u);
  EXPECT_EQ(fused.token_ids, plain.token_ids);
  for (std::size_t i = 0; i < 9; ++i)
    EXPECT_TRUE(geosense::testing::rows_equal(fused.override_at(i), plain.override_at(i)));
}

TEST(Fused, EqualLengthsAddRowwise) {
  const auto v = random_tensor<float>({4, 3}, 1), g = random_tensor<float>({4, 3}, 2);
  const auto fused = assemble_fused<float>(no_tape, example_text(), v, g);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = fused.override_at(2 + r);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(row[k], v.at(r, k) + g.at(r, k));
  }
}

TEST(Fused, DoubleLengthUsesAdjacentMean) {
  const auto v = random_tensor<float>({4, 3}, 1), g = random_tensor<float>({8, 3}, 2);
  const auto fused = assemble_fused<float>(no_tape, example_text(), v, g);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = fused.override_at(2 + r);
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_NEAR(row[k], v.at(r, k) + 0.5 * (g.at(2 * r, k) + g.at(2 * r + 1, k)), 1e-6);
  }
}

TEST(Fused, PoolingMatrixRowsSumToOne) {
  for (std::size_t tv = 1; tv <= 6; ++tv)
    for (std::size_t tg = 1; tg <= 12; ++tg) {
      const auto p = fusion_pooling<double>(tv, tg);
      for (std::size_t i = 0; i < tv; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < tg; ++j) s += p.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
}

TEST(SequenceProperties, RandomizedCases) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto bad = geosense::testing::sequence_case_violations(s);
    EXPECT_TRUE(bad.empty()) << bad.front();
  }
}
