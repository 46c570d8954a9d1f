#pragma once

// Projection of channel features into the model width and assembly of the
// multimodal input: text with vision placeholders, then optionally the
// geometry segment GEO_START, T_g geometry rows, GEO_END.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "geosense/tensor.hpp"
#include "geosense/vocab.hpp"
#include "geosense/world.hpp"

namespace geosense {

enum class Segment : std::uint8_t { Text, Vision, GeoStart, Geo, GeoEnd };

const char* to_string(Segment s);

template <typename T>
struct Projectors {
  Tensor<T> w2d;  // [D_2D × D_MM]
  Tensor<T> w3d;  // [D_3D × D_MM]

  static Projectors init(int d2d, int d3d, int d_model, std::uint64_t seed);
};

// Rows of `rows` replace the embeddings at `positions`, in order.
template <typename T>
struct OverrideBlock {
  Segment segment = Segment::Vision;
  std::vector<std::size_t> positions;
  Tensor<T> rows;
};

template <typename T>
struct AssembledSequence {
  std::vector<TokenId> token_ids;
  std::vector<OverrideBlock<T>> overrides;
  std::vector<Segment> segments;

  std::size_t size() const { return token_ids.size(); }
  bool has_geometry() const;
  // Index of GEO_START, if present.
  std::optional<std::size_t> geo_start() const;
  // Override row for `pos`, or nullptr-equivalent empty span.
  std::span<const T> override_at(std::size_t pos) const;
};

// Segment tags derived from token ids alone.
std::vector<Segment> segments_from_tokens(std::span<const TokenId> ids);

template <typename T>
Tensor<T> project(Tape<T>& tape, const FeatureSeq<T>& features, const Projectors<T>& projectors);

// `text` must contain exactly vision.rows() VISION_PAD placeholders and no
// geometry ids. The geometry segment, when given, goes after the last text id.
template <typename T>
AssembledSequence<T> assemble(std::span<const TokenId> text, const Tensor<T>& vision,
                              const std::optional<Tensor<T>>& geometry);

// Appends plain text ids (for example an assistant turn) to a sequence.
template <typename T>
void append_text(AssembledSequence<T>& seq, std::span<const TokenId> ids);

// Geometry rows replaced by zeros; everything else untouched.
template <typename T>
AssembledSequence<T> suppress_geometry(const AssembledSequence<T>& seq);

// Fixed T_v × T_g resampling matrix used by the fused layout: adjacent-mean
// when T_g is a multiple of T_v, nearest-row otherwise.
template <typename T>
Tensor<T> fusion_pooling(std::size_t t_v, std::size_t t_g);

// Geometry pooled onto the vision rows and added element-wise; no geometry
// segment, so length equals |text|.
template <typename T>
AssembledSequence<T> assemble_fused(Tape<T>& tape, std::span<const TokenId> text,
                                    const Tensor<T>& vision, const Tensor<T>& geometry);

}  // namespace geosense
