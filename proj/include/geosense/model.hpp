#pragma once

// The full micro-model: frozen encoders, trainable projectors, decoder.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geosense/backbone.hpp"
#include "geosense/sequence.hpp"
#include "geosense/world.hpp"

namespace geosense {

struct ModelConfig {
  WorldConfig world;
  BackboneConfig backbone;
  std::uint64_t projector_seed = 11;

  void validate() const;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ull);

template <typename T>
std::uint64_t tensor_digest(const Tensor<T>& t);

template <typename T>
class GeoSenseModel {
 public:
  GeoSenseModel() = default;
  explicit GeoSenseModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Projected vision tokens [T_v × D_MM].
  Tensor<T> vision_tokens(Tape<T>& tape, const Scene& scene) const;
  // Same, from caller-supplied encoder features [T_v × D_2D].
  Tensor<T> vision_tokens_from_features(Tape<T>& tape, const Tensor<T>& features) const;
  // Projected geometry tokens [T_g × D_MM]. Counted, see geometry_calls().
  Tensor<T> geometry_tokens(Tape<T>& tape, const Scene& scene) const;

  std::size_t geometry_encoder_calls() const { return geometry_encoder_calls_; }
  std::size_t projector_3d_calls() const { return projector_3d_calls_; }
  void reset_call_counts() const { geometry_encoder_calls_ = projector_3d_calls_ = 0; }

  // Trainable set: backbone (incl. boundary embeddings) and projectors.
  std::vector<Tensor<T>*> trainable();
  // Every tensor, trainable first, then the frozen encoder weights.
  std::vector<Tensor<T>*> all_tensors();
  std::vector<const Tensor<T>*> all_tensors() const;

  // Independent deep copy.
  GeoSenseModel clone() const;

  VisionEncoder<T> vision_encoder;
  GeometryEncoder<T> geometry_encoder;
  Projectors<T> projectors;
  Backbone<T> backbone;

 private:
  ModelConfig config_;
  mutable std::size_t geometry_encoder_calls_ = 0;
  mutable std::size_t projector_3d_calls_ = 0;
};

using Model = GeoSenseModel<float>;

// [BOS] query VISION_PAD×T_v [TURN_SEP]
std::vector<TokenId> prompt_tokens(const Scene& scene, const WorldConfig& world);

}  // namespace geosense
