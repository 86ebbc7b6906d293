#pragma once

#include <algorithm>
#include <cmath>

#include "ssdesc/nn/tensor.hpp"

namespace ssdesc::nn {

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  for (T& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

/// `out` is the forward output; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& out, Tensor<T> dy) {
  require_shape(dy.shape(), out.shape(), "relu backward gradient");
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(out[i] > T(0))) dy[i] = T(0);
  }
  return dy;
}

/// Divides each row of a (rows x dim) tensor by max(||row||, eps).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps = T(1e-8)) {
  if (v.rank() != 2) throw ShapeError("l2_normalize expects a (rows x dim) tensor, got " + shape_string(v.shape()));
  const std::size_t rows = v.dim(0), dim = v.dim(1);
  Tensor<T> y(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = v.data() + r * dim;
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += static_cast<double>(src[i]) * src[i];
    const double norm = std::max(std::sqrt(sq), static_cast<double>(eps));
    T* dst = y.data() + r * dim;
    for (std::size_t i = 0; i < dim; ++i) dst[i] = static_cast<T>(src[i] / norm);
  }
  return y;
}

template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& v, const Tensor<T>& dy, T eps = T(1e-8)) {
  require_shape(dy.shape(), v.shape(), "l2_normalize backward gradient");
  const std::size_t rows = v.dim(0), dim = v.dim(1);
  Tensor<T> dv(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = v.data() + r * dim;
    const T* g = dy.data() + r * dim;
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += static_cast<double>(src[i]) * src[i];
    const double norm = std::sqrt(sq);
    T* dst = dv.data() + r * dim;
    if (norm <= static_cast<double>(eps)) {
      for (std::size_t i = 0; i < dim; ++i) dst[i] = static_cast<T>(g[i] / static_cast<double>(eps));
      continue;
    }
    double proj = 0.0;
    for (std::size_t i = 0; i < dim; ++i) proj += static_cast<double>(g[i]) * src[i];
    proj /= norm;  // y . dy
    for (std::size_t i = 0; i < dim; ++i) dst[i] = static_cast<T>((g[i] - (src[i] / norm) * proj) / norm);
  }
  return dv;
}

}  // namespace ssdesc::nn
