#include "geosense/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "geosense/errors.hpp"

namespace geosense {

const char* to_string(Segment s) {
  switch (s) {
    case Segment::Text: return "TEXT";
    case Segment::Vision: return "VISION";
    case Segment::GeoStart: return "GEO_START";
    case Segment::Geo: return "GEO";
    case Segment::GeoEnd: return "GEO_END";
  }
  return "?";
}

template <typename T>
Projectors<T> Projectors<T>::init(int d2d, int d3d, int d_model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make = [&](int in, const char* name) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    std::vector<T> w(static_cast<std::size_t>(in * d_model));
    for (auto& v : w) v = static_cast<T>(normal(rng));
    Tensor<T> t({static_cast<std::size_t>(in), static_cast<std::size_t>(d_model)}, std::move(w), true);
    t.set_name(name);
    return t;
  };
  Projectors p;
  p.w2d = make(d2d, "proj.2d");
  p.w3d = make(d3d, "proj.3d");
  return p;
}

template <typename T>
bool AssembledSequence<T>::has_geometry() const {
  return geo_start().has_value();
}

template <typename T>
std::optional<std::size_t> AssembledSequence<T>::geo_start() const {
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i] == Segment::GeoStart) return i;
  return std::nullopt;
}

template <typename T>
std::span<const T> AssembledSequence<T>::override_at(std::size_t pos) const {
  for (const auto& b : overrides) {
    for (std::size_t r = 0; r < b.positions.size(); ++r) {
      if (b.positions[r] == pos) {
        const auto cols = b.rows.cols();
        return b.rows.data().subspan(r * cols, cols);
      }
    }
  }
  return {};
}

std::vector<Segment> segments_from_tokens(std::span<const TokenId> ids) {
  std::vector<Segment> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    switch (id) {
      case tok::kVisionPad: out.push_back(Segment::Vision); break;
      case tok::kGeoStart: out.push_back(Segment::GeoStart); break;
      case tok::kVggtPad: out.push_back(Segment::Geo); break;
      case tok::kGeoEnd: out.push_back(Segment::GeoEnd); break;
      default: out.push_back(Segment::Text); break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> project(Tape<T>& tape, const FeatureSeq<T>& features, const Projectors<T>& projectors) {
  const auto& w = features.channel == Channel::Vision ? projectors.w2d : projectors.w3d;
  if (features.tokens.cols() != w.shape()[0]) {
    throw DimensionError(std::string("project: ") +
                         (features.channel == Channel::Vision ? "vision" : "geometry") +
                         " feature width " + std::to_string(features.tokens.cols()) +
                         " does not match projector input " + shape_str(w.shape()));
  }
  return matmul(tape, features.tokens, w);
}

namespace {

std::vector<std::size_t> vision_positions(std::span<const TokenId> text, std::size_t expected) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto id = text[i];
    if (id == tok::kVisionPad) pos.push_back(i);
    if (id == tok::kVggtPad || id == tok::kGeoStart || id == tok::kGeoEnd) {
      throw AssemblyError("text contains geometry id " + Vocab::name(id) + " at position " +
                          std::to_string(i));
    }
  }
  if (pos.size() != expected) {
    throw AssemblyError("expected " + std::to_string(expected) + " vision placeholders, found " +
                        std::to_string(pos.size()));
  }
  return pos;
}

}  // namespace

template <typename T>
AssembledSequence<T> assemble(std::span<const TokenId> text, const Tensor<T>& vision,
                              const std::optional<Tensor<T>>& geometry) {
  AssembledSequence<T> seq;
  auto vpos = vision_positions(text, vision.rows());
  seq.token_ids.assign(text.begin(), text.end());
  seq.overrides.push_back({Segment::Vision, std::move(vpos), vision});
  if (geometry) {
    if (geometry->cols() != vision.cols()) {
      throw DimensionError("assemble: geometry width " + std::to_string(geometry->cols()) +
                           " differs from vision width " + std::to_string(vision.cols()));
    }
    seq.token_ids.push_back(tok::kGeoStart);
    std::vector<std::size_t> gpos;
    for (std::size_t r = 0; r < geometry->rows(); ++r) {
      gpos.push_back(seq.token_ids.size());
      seq.token_ids.push_back(tok::kVggtPad);
    }
    seq.token_ids.push_back(tok::kGeoEnd);
    seq.overrides.push_back({Segment::Geo, std::move(gpos), *geometry});
  }
  seq.segments = segments_from_tokens(seq.token_ids);
  return seq;
}

template <typename T>
void append_text(AssembledSequence<T>& seq, std::span<const TokenId> ids) {
  for (auto id : ids) {
    if (id == tok::kVisionPad || id == tok::kVggtPad || id == tok::kGeoStart || id == tok::kGeoEnd) {
      throw AssemblyError("append_text: placeholder or boundary id " + Vocab::name(id));
    }
    seq.token_ids.push_back(id);
    seq.segments.push_back(Segment::Text);
  }
}

template <typename T>
AssembledSequence<T> suppress_geometry(const AssembledSequence<T>& seq) {
  if (!seq.has_geometry()) throw ContractError("suppress_geometry: sequence has no geometry segment");
  AssembledSequence<T> out = seq;
  for (auto& b : out.overrides) {
    if (b.segment == Segment::Geo) b.rows = Tensor<T>::zeros(b.rows.shape());
  }
  return out;
}

template <typename T>
Tensor<T> fusion_pooling(std::size_t t_v, std::size_t t_g) {
  std::vector<T> p(t_v * t_g, T(0));
  if (t_g % t_v == 0) {
    const auto r = t_g / t_v;
    for (std::size_t i = 0; i < t_v; ++i)
      for (std::size_t j = i * r; j < (i + 1) * r; ++j) p[i * t_g + j] = T(1) / static_cast<T>(r);
  } else {
    for (std::size_t i = 0; i < t_v; ++i) {
      const auto j = std::min(t_g - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) *
                                                                static_cast<double>(t_g) /
                                                                static_cast<double>(t_v)));
      p[i * t_g + j] = T(1);
    }
  }
  return Tensor<T>({t_v, t_g}, std::move(p));
}

template <typename T>
AssembledSequence<T> assemble_fused(Tape<T>& tape, std::span<const TokenId> text,
                                    const Tensor<T>& vision, const Tensor<T>& geometry) {
  if (geometry.cols() != vision.cols()) {
    throw DimensionError("assemble_fused: geometry width " + std::to_string(geometry.cols()) +
                         " differs from vision width " + std::to_string(vision.cols()));
  }
  auto vpos = vision_positions(text, vision.rows());
  Tensor<T> pooled = geometry.rows() == vision.rows()
                         ? geometry
                         : matmul(tape, fusion_pooling<T>(vision.rows(), geometry.rows()), geometry);
  AssembledSequence<T> seq;
  seq.token_ids.assign(text.begin(), text.end());
  seq.overrides.push_back({Segment::Vision, std::move(vpos), add(tape, vision, pooled)});
  seq.segments = segments_from_tokens(seq.token_ids);
  return seq;
}

#define GEOSENSE_INSTANTIATE(T)                                                                    \
  template struct Projectors<T>;                                                                   \
  template struct AssembledSequence<T>;                                                            \
  template Tensor<T> project(Tape<T>&, const FeatureSeq<T>&, const Projectors<T>&);                \
  template AssembledSequence<T> assemble(std::span<const TokenId>, const Tensor<T>&,               \
                                         const std::optional<Tensor<T>>&);                         \
  template void append_text(AssembledSequence<T>&, std::span<const TokenId>);                      \
  template AssembledSequence<T> suppress_geometry(const AssembledSequence<T>&);                    \
  template Tensor<T> fusion_pooling<T>(std::size_t, std::size_t);                                  \
  template AssembledSequence<T> assemble_fused(Tape<T>&, std::span<const TokenId>,                 \
                                               const Tensor<T>&, const Tensor<T>&);

GEOSENSE_INSTANTIATE(float)
GEOSENSE_INSTANTIATE(double)

#undef GEOSENSE_INSTANTIATE

}  // namespace geosense
