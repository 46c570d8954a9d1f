#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "geosense/tensor.hpp"

namespace geosense {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double warmup_ratio = 0.03;
};

// Per-parameter moments plus the shared step counter.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t t = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// Learning rate at step `step`: linear ramp from 0 over
// floor(warmup_ratio * total_steps) steps, constant afterwards.
double scheduled_lr(const AdamConfig& cfg, std::size_t step, std::size_t total_steps);

// One bias-corrected Adam update over `params` using their accumulated grads.
// Moments are created on the first call. Throws NumericError naming the first
// parameter holding a non-finite gradient (before touching anything).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, std::size_t total_steps);

}  // namespace geosense
