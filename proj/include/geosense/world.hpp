#pragma once

// Synthetic scenes and the two frozen feature encoders.
//
// Each scene holds up to `max_objects` real objects and, for GEO_HARMFUL
// scenes only, phantom objects that exist solely in the geometry channel.
// The vision encoder sees shape/color/cell of real objects; the geometry
// encoder sees cell/depth of real and phantom objects plus a scene-level
// entity count (a camera-token style summary). Neither sees the other's
// private attributes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geosense/tensor.hpp"
#include "geosense/vocab.hpp"

namespace geosense {

enum class TaskKind { GeoRequired, GeoHarmful, GeoNeutral };
enum class Split { Train, Eval };
enum class Channel { Vision, Geometry };

inline constexpr std::array<TaskKind, 3> kAllTaskKinds{TaskKind::GeoRequired, TaskKind::GeoHarmful,
                                                       TaskKind::GeoNeutral};

std::string to_string(TaskKind kind);
std::string to_string(Split split);
TaskKind parse_task_kind(std::string_view s);
Split parse_split(std::string_view s);

struct SceneObject {
  int shape_id = 0;
  int color_id = 0;
  int row = 0;
  int col = 0;
  double depth = 1.0;

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<SceneObject> phantom_objects;
  std::vector<TokenId> query;   // starts with the background token
  std::vector<TokenId> answer;  // canonical answer, no terminator
  TaskKind task_kind = TaskKind::GeoNeutral;
  Split split = Split::Train;
  std::uint64_t seed = 0;

  TokenId background() const { return query.empty() ? tok::kBos : query.front(); }
  bool operator==(const Scene&) const = default;
};

struct WorldConfig {
  int grid_size = 4;
  int max_objects = 4;
  int max_phantoms = 2;
  int vision_dim = 24;    // D_2D
  int geometry_dim = 24;  // D_3D
  std::uint64_t encoder_seed = 0x5eed;

  int slots() const { return max_objects + max_phantoms; }
  int vision_tokens() const { return slots(); }    // T_v
  int geometry_tokens() const { return slots(); }  // T_g
  int vision_channels() const;
  int geometry_channels() const;
  void validate() const;
};

// Deterministic in (seed, kind, config). Depths of all entities are pairwise
// separated by at least kDepthMargin.
inline constexpr double kDepthMargin = 0.1;
Scene generate_scene(std::uint64_t seed, TaskKind kind, const WorldConfig& config);
Scene generate_scene(std::uint64_t seed, TaskKind kind, int grid_size);

// Answer recomputed from scene fields (used to check stored answers).
std::vector<TokenId> recompute_answer(const Scene& scene);

template <typename T>
struct FeatureSeq {
  Tensor<T> tokens;  // [T × D]
  Channel channel = Channel::Vision;
};

// Structured per-slot inputs the encoders consume, exposed for tests.
std::vector<double> vision_channels(const Scene& scene, const WorldConfig& config);
std::vector<double> geometry_channels(const Scene& scene, const WorldConfig& config);

// Fixed random linear map followed by tanh. Never trained: the weights are
// created with requires_grad = false from config.encoder_seed.
template <typename T>
class VisionEncoder {
 public:
  VisionEncoder() = default;
  explicit VisionEncoder(const WorldConfig& config);
  FeatureSeq<T> encode(Tape<T>& tape, const Scene& scene) const;
  Tensor<T>& weights() { return weights_; }
  const Tensor<T>& weights() const { return weights_; }

 private:
  WorldConfig config_;
  Tensor<T> weights_;
};

template <typename T>
class GeometryEncoder {
 public:
  GeometryEncoder() = default;
  explicit GeometryEncoder(const WorldConfig& config);
  FeatureSeq<T> encode(Tape<T>& tape, const Scene& scene) const;
  Tensor<T>& weights() { return weights_; }
  const Tensor<T>& weights() const { return weights_; }

 private:
  WorldConfig config_;
  Tensor<T> weights_;
};

// Requested scene counts per task kind and split.
struct BenchmarkConfig {
  std::uint64_t seed = 1;
  std::array<int, 3> train_counts{0, 0, 0};  // indexed like kAllTaskKinds
  std::array<int, 3> eval_counts{100, 100, 100};

  // Train mixture following the spatial/general split of the perception
  // data (55K spatial of 117K): 47% GEO_REQUIRED, the rest general,
  // of which `harmful_share` carries phantom objects.
  static BenchmarkConfig with_default_mixture(std::uint64_t seed, int train_total, int eval_per_kind,
                                              double harmful_share = 0.15);
};

inline constexpr double kSpatialShare = 55.0 / 117.0;

// Train seeds and eval seeds come from disjoint ranges.
std::vector<Scene> make_benchmark(const BenchmarkConfig& config, const WorldConfig& world);

std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line);
void save_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::filesystem::path& path);

std::vector<Scene> filter_scenes(const std::vector<Scene>& scenes, std::optional<Split> split,
                                 std::optional<TaskKind> kind = std::nullopt);

}  // namespace geosense
