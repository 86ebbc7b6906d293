#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssdesc/error.hpp"
#include "ssdesc/nn/conv2d.hpp"
#include "ssdesc/nn/tensor.hpp"
#include "ssdesc/rng.hpp"

namespace ssdesc {

/// d(i, j) = distance between anchor descriptor i and positive descriptor j.
template <typename T>
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<T> d;
  /// Raw radicand 2 - 2 a_i . p_j before clamping; drives the gradient mask.
  std::vector<T> radicand;

  T operator()(std::size_t i, std::size_t j) const { return d[i * n + j]; }
  T& operator()(std::size_t i, std::size_t j) { return d[i * n + j]; }
};

namespace detail {

template <typename T>
void require_unit_rows(const nn::Tensor<T>& x, const char* what, double tol) {
  if (x.rank() != 2) throw ShapeError(std::string(what) + " must be (N x dim), got " + nn::shape_string(x.shape()));
  const std::size_t dim = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += static_cast<double>(x[r * dim + i]) * x[r * dim + i];
    if (std::abs(std::sqrt(sq) - 1.0) > tol) {
      throw ParameterError(std::string("contract violation: ") + what + " row " + std::to_string(r) +
                           " has norm " + std::to_string(std::sqrt(sq)));
    }
  }
}

}  // namespace detail

/// d[i][j] = sqrt(clamp(2 - 2 a_i . p_j, 0, 4)) for unit-norm rows.
template <typename T>
DistanceMatrix<T> pairwise_distance(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives,
                                    double unit_tolerance = 1e-4) {
  detail::require_unit_rows(anchors, "anchors", unit_tolerance);
  detail::require_unit_rows(positives, "positives", unit_tolerance);
  if (anchors.shape() != positives.shape()) {
    throw ShapeError("anchors " + nn::shape_string(anchors.shape()) + " and positives " +
                     nn::shape_string(positives.shape()) + " differ");
  }
  const std::size_t n = anchors.dim(0), dim = anchors.dim(1);
  using Mat = nn::RowMatrix<T>;
  const auto a = Eigen::Map<const Mat>(anchors.data(), n, dim);
  const auto p = Eigen::Map<const Mat>(positives.data(), n, dim);
  Mat dots = a * p.transpose();
  DistanceMatrix<T> out{n, std::vector<T>(n * n), std::vector<T>(n * n)};
  for (std::size_t i = 0; i < n * n; ++i) {
    const T r = T(2) - T(2) * dots.data()[i];
    out.radicand[i] = r;
    out.d[i] = std::sqrt(std::clamp(r, T(0), T(4)));
  }
  return out;
}

template <typename T>
struct DescriptorGrads {
  nn::Tensor<T> anchors;
  nn::Tensor<T> positives;
};

/// Back-propagates dL/dd through the distance matrix. Entries whose radicand
/// was clamped (or whose distance is 0) receive no gradient.
template <typename T>
DescriptorGrads<T> pairwise_distance_backward(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives,
                                              const DistanceMatrix<T>& dist, const std::vector<T>& d_dist) {
  const std::size_t n = anchors.dim(0), dim = anchors.dim(1);
  using Mat = nn::RowMatrix<T>;
  Mat g(n, n);  // dL/d(a_i . p_j)
  for (std::size_t i = 0; i < n * n; ++i) {
    const T r = dist.radicand[i];
    const T d = dist.d[i];
    g.data()[i] = (d_dist[i] != T(0) && r > T(0) && r < T(4) && d > T(0)) ? -d_dist[i] / d : T(0);
  }
  const auto a = Eigen::Map<const Mat>(anchors.data(), n, dim);
  const auto p = Eigen::Map<const Mat>(positives.data(), n, dim);
  DescriptorGrads<T> out{nn::Tensor<T>(anchors.shape()), nn::Tensor<T>(positives.shape())};
  Eigen::Map<Mat>(out.anchors.data(), n, dim).noalias() = g * p;
  Eigen::Map<Mat>(out.positives.data(), n, dim).noalias() = g.transpose() * a;
  return out;
}

struct HardNegatives {
  std::size_t j_min;  ///< closest non-matching positive to anchor i
  std::size_t k_min;  ///< closest non-matching anchor to positive i
};

/// Batch-hard mining for sample i; ties go to the smallest index.
template <typename T>
HardNegatives mine_hard(const DistanceMatrix<T>& d, std::size_t i) {
  if (d.n < 2) throw DataError("hard-negative mining needs at least 2 samples");
  if (i >= d.n) throw ParameterError("mining index out of range");
  HardNegatives h{d.n, d.n};
  for (std::size_t j = 0; j < d.n; ++j) {
    if (j == i) continue;
    if (h.j_min == d.n || d(i, j) < d(i, h.j_min)) h.j_min = j;
    if (h.k_min == d.n || d(j, i) < d(h.k_min, i)) h.k_min = j;
  }
  return h;
}

template <typename T>
struct LossResult {
  T value = T(0);
  DescriptorGrads<T> grads;
};

/// HardNet loss: mean over i of max(0, m + d(a_i, p_i) - min(d(a_i, p_jmin), d(a_kmin, p_i))).
/// A tie in the min selects the j_min branch.
template <typename T>
LossResult<T> hardnet_loss(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives, T margin = T(1)) {
  const auto dist = pairwise_distance(anchors, positives);
  const std::size_t n = dist.n;
  if (n < 2) throw DataError("HardNet loss needs a batch of at least 2 pairs");
  std::vector<T> d_dist(n * n, T(0));
  double total = 0.0;
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = mine_hard(dist, i);
    const bool use_j = dist(i, h.j_min) <= dist(h.k_min, i);
    const T neg = use_j ? dist(i, h.j_min) : dist(h.k_min, i);
    const T term = margin + dist(i, i) - neg;
    if (term > T(0)) {
      total += term;
      d_dist[i * n + i] += inv_n;
      d_dist[use_j ? i * n + h.j_min : h.k_min * n + i] -= inv_n;
    }
  }
  return {static_cast<T>(total / n), pairwise_distance_backward(anchors, positives, dist, d_dist)};
}

/// Per-sample margin from (positive distance, negative distance).
using MarginFn = std::function<double(double, double)>;

/// clamp(1 - d_neg / 2, 0.2, 1.0).
inline double default_adaptive_margin(double /*d_pos*/, double d_neg) {
  return std::clamp(1.0 - d_neg / 2.0, 0.2, 1.0);
}

namespace detail {

// Random in-batch negatives: for each i a uniformly drawn j != i.
inline std::vector<std::size_t> draw_negatives(std::size_t n, Rng& rng) {
  std::vector<std::size_t> neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = uniform_index(rng, n - 1);
    if (j >= i) ++j;
    neg[i] = j;
  }
  return neg;
}

template <typename T>
LossResult<T> random_negative_triplet(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives, Rng& rng,
                                      const MarginFn& margin_of) {
  const auto dist = pairwise_distance(anchors, positives);
  const std::size_t n = dist.n;
  if (n < 2) throw DataError("triplet loss needs a batch of at least 2 pairs");
  const auto neg = draw_negatives(n, rng);
  std::vector<T> d_dist(n * n, T(0));
  double total = 0.0;
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T dp = dist(i, i), dn = dist(i, neg[i]);
    const T m = static_cast<T>(margin_of(dp, dn));
    const T term = m + dp - dn;
    if (term > T(0)) {
      total += term;
      d_dist[i * n + i] += inv_n;
      d_dist[i * n + neg[i]] -= inv_n;
    }
  }
  return {static_cast<T>(total / n), pairwise_distance_backward(anchors, positives, dist, d_dist)};
}

}  // namespace detail

/// Standard triplet loss; the negative of anchor i is a random other positive.
template <typename T>
LossResult<T> triplet_loss(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives, T margin, Rng& rng) {
  const double m = margin;
  return detail::random_negative_triplet(anchors, positives, rng, [m](double, double) { return m; });
}

/// Triplet loss with a per-sample margin; the margin is held constant in backward.
template <typename T>
LossResult<T> adaptive_margin_triplet_loss(const nn::Tensor<T>& anchors, const nn::Tensor<T>& positives, Rng& rng,
                                           const MarginFn& margin_fn = default_adaptive_margin) {
  return detail::random_negative_triplet(anchors, positives, rng, margin_fn);
}

enum class LossKind { kHardNet, kTriplet, kAdaptive };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "hardnet") return LossKind::kHardNet;
  if (s == "triplet") return LossKind::kTriplet;
  if (s == "adaptive") return LossKind::kAdaptive;
  throw ParameterError("unknown loss '" + s + "' (expected hardnet|triplet|adaptive)");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kHardNet: return "hardnet";
    case LossKind::kTriplet: return "triplet";
    case LossKind::kAdaptive: return "adaptive";
  }
  return "hardnet";
}

}  // namespace ssdesc
