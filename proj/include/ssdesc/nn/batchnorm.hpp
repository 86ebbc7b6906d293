#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "ssdesc/nn/tensor.hpp"

namespace ssdesc::nn {

enum class Mode { kTrain, kEval };

/// Per-channel batch normalization over NCHW tensors.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into the running estimates (unbiased variance, as is customary);
/// eval mode uses the running estimates only.
template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  /// The normalized input is recomputed from `x` in backward() rather than stored.
  struct Cache {
    Tensor<T> x;
    std::vector<T> mean;
    std::vector<T> inv_std;
  };

  static BatchNormLayer make(std::size_t channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor<T>({channels}, T(1));
    bn.beta = Tensor<T>({channels}, T(0));
    bn.running_mean.assign(channels, T(0));
    bn.running_var.assign(channels, T(1));
    return bn;
  }

  std::size_t channels() const { return gamma.size(); }

  /// Eval-mode forward with the running statistics.
  Tensor<T> infer(const Tensor<T>& x) const {
    check(x);
    const std::size_t n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto y = Tensor<T>::uninitialized(x.shape());
    for (std::size_t c = 0; c < ch; ++c) {
      const T scale = gamma[c] / std::sqrt(running_var[c] + eps);
      const T shift = beta[c] - running_mean[c] * scale;
      for (std::size_t b = 0; b < n; ++b) row(y.data(), b, c, ch, hw) = row(x.data(), b, c, ch, hw) * scale + shift;
    }
    return y;
  }

  /// `cache` may be null in eval mode or when no backward pass follows.
  /// `fuse_relu` applies max(0, .) to the output; pass the same output to
  /// backward() as `relu_out` to mask the incoming gradient.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache = nullptr, bool update_running = true,
                    bool fuse_relu = false) {
    if (mode == Mode::kEval) {
      Tensor<T> y = infer(x);
      if (fuse_relu) for (T& v : y.values()) v = std::max(v, T(0));
      return y;
    }
    Tensor<T> y = train_forward(x, cache, update_running, fuse_relu);
    if (cache) cache->x = x;
    return y;
  }

  /// As above; a cached input is moved rather than copied.
  Tensor<T> forward(Tensor<T>&& x, Mode mode, Cache* cache = nullptr, bool update_running = true,
                    bool fuse_relu = false) {
    if (mode == Mode::kEval || !cache) {
      return forward(static_cast<const Tensor<T>&>(x), mode, cache, update_running, fuse_relu);
    }
    Tensor<T> y = train_forward(x, cache, update_running, fuse_relu);
    cache->x = std::move(x);
    return y;
  }

  /// Train-mode backward; accumulates into gamma.grad() and beta.grad().
  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy, const Tensor<T>* relu_out = nullptr) {
    require_shape(dy.shape(), cache.x.shape(), "batchnorm backward gradient");
    if (relu_out) require_shape(relu_out->shape(), dy.shape(), "batchnorm fused relu output");
    const std::size_t n = dy.dim(0), ch = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
    const double m = static_cast<double>(n * hw);
    auto dgamma = gamma.grad();
    auto dbeta = beta.grad();
    auto dx = Tensor<T>::uninitialized(dy.shape());
    for (std::size_t c = 0; c < ch; ++c) {
      const T mu = cache.mean[c], is = cache.inv_std[c];
      auto xhat = [&](std::size_t b) { return (row(cache.x.data(), b, c, ch, hw) - mu) * is; };
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        auto g = row(dx.data(), b, c, ch, hw);
        // dx holds the (masked) incoming gradient until it is overwritten below.
        if (relu_out) {
          g = (row(relu_out->data(), b, c, ch, hw) > T(0)).select(row(dy.data(), b, c, ch, hw), T(0));
        } else {
          g = row(dy.data(), b, c, ch, hw);
        }
        sum_dy += g.sum();
        sum_dy_xhat += (g * xhat(b)).sum();
      }
      dgamma[c] += static_cast<T>(sum_dy_xhat);
      dbeta[c] += static_cast<T>(sum_dy);
      const T k = static_cast<T>(static_cast<double>(gamma[c]) * is);
      const T mean_dy = static_cast<T>(sum_dy / m), mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
      for (std::size_t b = 0; b < n; ++b) {
        auto g = row(dx.data(), b, c, ch, hw);
        g = k * (g - mean_dy - xhat(b) * mean_dy_xhat);
      }
    }
    return dx;
  }

 private:
  Tensor<T> train_forward(const Tensor<T>& x, Cache* cache, bool update_running, bool fuse_relu) {
    check(x);
    const std::size_t n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (n < 2) throw ShapeError("batch normalization in train mode needs a batch of at least 2");
    auto y = Tensor<T>::uninitialized(x.shape());
    const double m = static_cast<double>(n * hw);
    if (cache) {
      cache->mean.assign(ch, T(0));
      cache->inv_std.assign(ch, T(0));
    }
    for (std::size_t c = 0; c < ch; ++c) {
      // Per-row mean and squared deviation while the row is cache-resident,
      // merged across rows in double with the pairwise variance update.
      double mean = 0.0, sq = 0.0, count = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const auto r = row(x.data(), b, c, ch, hw);
        const double rm = static_cast<double>(r.sum()) / static_cast<double>(hw);
        const double rsq = static_cast<double>((r - static_cast<T>(rm)).square().sum());
        const double delta = rm - mean, total = count + static_cast<double>(hw);
        mean += delta * static_cast<double>(hw) / total;
        sq += rsq + delta * delta * count * static_cast<double>(hw) / total;
        count = total;
      }
      const double var = sq / m;
      const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
      const T tm = static_cast<T>(mean), ts = static_cast<T>(inv_std);
      for (std::size_t b = 0; b < n; ++b) {
        auto dst = row(y.data(), b, c, ch, hw);
        dst = (row(x.data(), b, c, ch, hw) - tm) * ts * gamma[c] + beta[c];
        if (fuse_relu) dst = dst.max(T(0));
      }
      if (cache) {
        cache->mean[c] = tm;
        cache->inv_std[c] = ts;
      }
      if (update_running) {
        const double unbiased = m > 1.0 ? sq / (m - 1.0) : var;
        running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
        running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
      }
    }
    return y;
  }

  using Row = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstRow = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  static Row row(T* data, std::size_t b, std::size_t c, std::size_t ch, std::size_t hw) {
    return Row(data + (b * ch + c) * hw, static_cast<Eigen::Index>(hw));
  }
  static ConstRow row(const T* data, std::size_t b, std::size_t c, std::size_t ch, std::size_t hw) {
    return ConstRow(data + (b * ch + c) * hw, static_cast<Eigen::Index>(hw));
  }

  void check(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != channels()) {
      throw ShapeError("batchnorm input " + shape_string(x.shape()) + " does not have " +
                       std::to_string(channels()) + " channels");
    }
  }
};

}  // namespace ssdesc::nn
