#pragma once

#include <functional>
#include <vector>

#include "geosense/tensor.hpp"

namespace geosense {

// Builds a scalar loss on the given tape from the supplied inputs.
using LossFn = std::function<Tensor<double>(Tape<double>&, std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares tape gradients of `f` against central differences with step `h`
// for every coordinate of every input. The per-coordinate error is
// |analytic - fd| / (|analytic| + |fd| + 1e-12); the result holds the max.
// Inputs are copied, so the caller's tensors are left untouched.
GradCheckResult finite_diff_check(const LossFn& f, const std::vector<Tensor<double>>& inputs,
                                  double h = 1e-5);

double finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                         const Tensor<double>& point, double h = 1e-5);

}  // namespace geosense
