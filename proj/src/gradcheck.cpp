#include "geosense/gradcheck.hpp"

#include <cmath>

#include "geosense/errors.hpp"

namespace geosense {

GradCheckResult finite_diff_check(const LossFn& f, const std::vector<Tensor<double>>& inputs,
                                  double h) {
  if (h <= 0.0) throw ContractError("finite_diff_check: step must be positive");

  std::vector<Tensor<double>> work;
  work.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto c = in.clone();
    c.set_requires_grad(true);
    work.push_back(c);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto loss = f(tape, work);
    if (tape.size() > 0) tape.backward(loss);
    for (auto& w : work) {
      auto g = w.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  auto eval = [&]() {
    Tape<double> tape(false);
    return f(tape, work).item();
  };

  GradCheckResult result;
  for (std::size_t t = 0; t < work.size(); ++t) {
    auto data = work[t].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = eval();
      data[i] = saved - h;
      const double down = eval();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-12);
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = t;
        result.worst_index = i;
      }
    }
  }
  return result;
}

double finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                         const Tensor<double>& point, double h) {
  LossFn wrapped = [&](Tape<double>& tape, std::vector<Tensor<double>>& xs) {
    return f(tape, xs[0]);
  };
  return finite_diff_check(wrapped, {point}, h).max_rel_error;
}

}  // namespace geosense
