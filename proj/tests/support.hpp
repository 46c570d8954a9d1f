#pragma once

// Shared helpers for the unit suites.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "geosense/harness.hpp"

namespace geosense::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<T> data(shape_numel(shape));
  for (auto& x : data) x = static_cast<T>(n(rng));
  return Tensor<T>(std::move(shape), std::move(data), grad);
}

// A model small enough to train in a unit test.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.world.encoder_seed = 24301;
  c.backbone.d_model = 16;
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.max_len = 48;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("geosense_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<Scene> scenes_of(TaskKind kind, int n, std::uint64_t first_seed,
                                    const WorldConfig& world = {}) {
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(first_seed + static_cast<std::uint64_t>(i), kind, world));
  return out;
}

}  // namespace geosense::testing
