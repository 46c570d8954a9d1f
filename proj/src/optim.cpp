#include "geosense/optim.hpp"

#include <cmath>
#include <string>

#include "geosense/errors.hpp"

namespace geosense {

double scheduled_lr(const AdamConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warmup =
      static_cast<std::size_t>(std::floor(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (warmup == 0 || step >= warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, std::size_t total_steps) {
  if (state.t >= total_steps) {
    throw ContractError("adam_step: step " + std::to_string(state.t) + " is past the schedule of " +
                        std::to_string(total_steps) + " steps");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: moment shape mismatch for " + params[i].name());
    }
    if (!params[i].has_grad()) continue;
    for (T g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in parameter '" + params[i].name() + "'");
      }
    }
  }

  const auto& c = state.config;
  const double lr = scheduled_lr(c, state.t, total_steps);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = T(c.beta1), b2 = T(c.beta2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  }
}

template void adam_step(std::span<Tensor<float>>, AdamState<float>&, std::size_t);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&, std::size_t);

}  // namespace geosense
