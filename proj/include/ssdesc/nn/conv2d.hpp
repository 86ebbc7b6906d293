#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include <Eigen/Core>

#include "ssdesc/nn/tensor.hpp"
#include "ssdesc/rng.hpp"

namespace ssdesc::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 2-D cross-correlation layer. weight is (out, in, kh, kw), bias is (out).
template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;

  /// He-uniform fan-in initialization, zero bias.
  static ConvLayer he_uniform(std::size_t in, std::size_t out, std::size_t k, int stride, int padding, Rng& rng) {
    ConvLayer layer;
    layer.weight = Tensor<T>({out, in, k, k});
    layer.bias = Tensor<T>({out});
    layer.stride = stride;
    layer.padding = padding;
    const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
    for (T& w : layer.weight.values()) w = static_cast<T>(uniform(rng, -bound, bound));
    return layer;
  }

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }

  /// floor((in + 2 pad - k) / stride) + 1 per axis; throws when below 1.
  std::pair<std::size_t, std::size_t> output_extent(std::size_t h, std::size_t w) const {
    const long oh = (static_cast<long>(h) + 2 * padding - static_cast<long>(kernel_h())) / stride + 1;
    const long ow = (static_cast<long>(w) + 2 * padding - static_cast<long>(kernel_w())) / stride + 1;
    if (static_cast<long>(h) + 2 * padding < static_cast<long>(kernel_h()) ||
        static_cast<long>(w) + 2 * padding < static_cast<long>(kernel_w()) || oh < 1 || ow < 1) {
      throw ShapeError("conv output extent < 1 for input " + std::to_string(h) + "x" + std::to_string(w) +
                       " and kernel " + shape_string(weight.shape()));
    }
    return {static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const Geometry g = geometry(x);
    auto y = Tensor<T>::uninitialized({g.n, g.cout, g.oh, g.ow});
    const std::size_t ohw = g.oh * g.ow;
    const auto wmat = Eigen::Map<const RowMatrix<T>>(weight.data(), g.cout, g.k);
    const auto bvec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), g.cout);
    const std::size_t chunk = chunk_size(g);
    RowMatrix<T> cols, out;
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t nb = std::min(chunk, g.n - n0);
      im2col(x, g, n0, nb, cols);
      if (nb == 1) {
        // One image: its (cout x OHW) block of y is exactly the GEMM output.
        auto dst = Eigen::Map<RowMatrix<T>>(y.data() + n0 * g.cout * ohw, g.cout, ohw);
        dst.noalias() = wmat * cols;
        dst.colwise() += bvec;
        continue;
      }
      out.noalias() = wmat * cols;
      out.colwise() += bvec;
      for (std::size_t b = 0; b < nb; ++b) {
        T* dst = y.data() + (n0 + b) * g.cout * ohw;
        for (std::size_t c = 0; c < g.cout; ++c) {
          std::copy_n(out.data() + c * nb * ohw + b * ohw, ohw, dst + c * ohw);
        }
      }
    }
    return y;
  }

  /// Accumulates into weight.grad() and bias.grad(); returns dL/dx when
  /// `input_grad` is set, an empty tensor otherwise.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool input_grad = true) {
    const Geometry g = geometry(x);
    require_shape(dy.shape(), {g.n, g.cout, g.oh, g.ow}, "conv2d backward gradient");
    const std::size_t ohw = g.oh * g.ow;
    auto wmat = Eigen::Map<const RowMatrix<T>>(weight.data(), g.cout, g.k);
    auto dw = Eigen::Map<RowMatrix<T>>(weight.grad().data(), g.cout, g.k);
    auto db = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.grad().data(), g.cout);
    Tensor<T> dx;
    if (input_grad) dx = Tensor<T>(x.shape());
    const std::size_t chunk = chunk_size(g);
    RowMatrix<T> cols, dcols, dout;
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t nb = std::min(chunk, g.n - n0);
      if (nb > 1) {
        dout.resize(g.cout, nb * ohw);
        for (std::size_t b = 0; b < nb; ++b) {
          const T* src = dy.data() + (n0 + b) * g.cout * ohw;
          for (std::size_t c = 0; c < g.cout; ++c) {
            std::copy_n(src + c * ohw, ohw, dout.data() + c * nb * ohw + b * ohw);
          }
        }
      }
      const auto d = Eigen::Map<const RowMatrix<T>>(nb > 1 ? dout.data() : dy.data() + n0 * g.cout * ohw, g.cout,
                                                    nb * ohw);
      im2col(x, g, n0, nb, cols);
      dw.noalias() += d * cols.transpose();
      db += d.rowwise().sum();
      if (input_grad) {
        dcols.noalias() = wmat.transpose() * d;
        col2im(dcols, g, n0, nb, dx);
      }
    }
    return dx;
  }

 private:
  struct Geometry {
    std::size_t n, cin, h, w, cout, kh, kw, oh, ow, k;
  };

  Geometry geometry(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_channels()) {
      throw ShapeError("conv2d input " + shape_string(x.shape()) + " incompatible with weight " +
                       shape_string(weight.shape()));
    }
    if (bias.size() != out_channels()) {
      throw ShapeError("conv2d bias " + shape_string(bias.shape()) + " incompatible with weight " +
                       shape_string(weight.shape()));
    }
    Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), out_channels(), kernel_h(), kernel_w(), 0, 0, 0};
    std::tie(g.oh, g.ow) = output_extent(g.h, g.w);
    g.k = g.cin * g.kh * g.kw;
    return g;
  }

  static std::size_t chunk_size(const Geometry& g) {
    constexpr std::size_t kBudget = std::size_t{1} << 19;  // column-buffer elements; about L2-sized
    return std::max<std::size_t>(1, kBudget / std::max<std::size_t>(1, g.k * g.oh * g.ow));
  }

  // Output columns [lo, hi) whose input coordinate o * stride - pad + k lies in [0, extent).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t extent, std::size_t out) const {
    const long s = stride, off = static_cast<long>(k) - padding;
    const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    const long last = static_cast<long>(extent) - 1 - off;
    const long hi = last < 0 ? 0 : std::min<long>(static_cast<long>(out), last / s + 1);
    return {static_cast<std::size_t>(std::min<long>(lo, hi)), static_cast<std::size_t>(hi)};
  }

  // cols is (K x nb*OH*OW); image b of the chunk owns columns [b*OHW, (b+1)*OHW).
  void im2col(const Tensor<T>& x, const Geometry& g, std::size_t n0, std::size_t nb, RowMatrix<T>& cols) const {
    const std::size_t ohw = g.oh * g.ow, ld = nb * ohw;
    cols.resize(g.k, ld);
    const long s = stride, p = padding;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [y0, y1] = valid_range(ky, g.h, g.oh);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [x0, x1] = valid_range(kx, g.w, g.ow);
        const long xoff = static_cast<long>(kx) - p;
        for (std::size_t b = 0; b < nb; ++b) {
          const T* img = x.data() + (n0 + b) * g.cin * g.h * g.w;
          for (std::size_t c = 0; c < g.cin; ++c) {
            T* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * ld + b * ohw;
            std::fill_n(row, y0 * g.ow, T(0));
            std::fill_n(row + y1 * g.ow, (g.oh - y1) * g.ow, T(0));
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
              T* dst = row + oy * g.ow;
              const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w + xoff;
              std::fill_n(dst, x0, T(0));
              std::fill_n(dst + x1, g.ow - x1, T(0));
              if (s == 1) {
                std::copy(src + x0, src + x1, dst + x0);
              } else {
                for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] = src[static_cast<long>(ox) * s];
              }
            }
          }
        }
      }
    }
  }

  void col2im(const RowMatrix<T>& cols, const Geometry& g, std::size_t n0, std::size_t nb, Tensor<T>& dx) const {
    const std::size_t ohw = g.oh * g.ow, ld = nb * ohw;
    const long s = stride, p = padding;
    for (std::size_t b = 0; b < nb; ++b) {
      T* img = dx.data() + (n0 + b) * g.cin * g.h * g.w;
      for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [y0, y1] = valid_range(ky, g.h, g.oh);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto [x0, x1] = valid_range(kx, g.w, g.ow);
            const long xoff = static_cast<long>(kx) - p;
            const T* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * ld + b * ohw;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
              T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w + xoff;
              const T* src = row + oy * g.ow;
              if (s == 1) {
                for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] += src[ox];
              } else {
                for (std::size_t ox = x0; ox < x1; ++ox) dst[static_cast<long>(ox) * s] += src[ox];
              }
            }
          }
        }
      }
    }
  }
};

}  // namespace ssdesc::nn
