#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "ssdesc/nn/tensor.hpp"

namespace ssdesc::nn {

/// Relative error with a max(|a|, |b|, 1e-8) denominator.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares `analytic` (the backprop gradient of f at x) against central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h over `coords` (all when empty).
/// Returns the largest relative error.
template <typename T, typename F>
double grad_check(F&& f, Tensor<T> x, std::span<const T> analytic, T h = T(1e-3),
                  std::span<const std::size_t> coords = {}) {
  if (analytic.size() != x.size()) throw ShapeError("grad_check: analytic gradient length differs from x");
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  double worst = 0.0;
  for (std::size_t i : coords) {
    const T saved = x[i];
    x[i] = saved + h;
    const double up = static_cast<double>(f(x));
    x[i] = saved - h;
    const double down = static_cast<double>(f(x));
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    worst = std::max(worst, relative_error(numeric, static_cast<double>(analytic[i])));
  }
  return worst;
}

}  // namespace ssdesc::nn
