// Convolution as im2col + GEMM. Cross-correlation semantics (no kernel flip),
// zero padding, floor division for the output size. Products accumulate in
// double at both precisions; f32 tensors round only the results.

#include <vector>

#include <Eigen/Core>
#include <fmt/core.h>

#include "kernels.hpp"
#include "stsc/runtime.hpp"

namespace stsc::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dims {
  std::int64_t ci, h, w, co, kh, kw, oh, ow, stride, pad;
  std::int64_t k() const { return ci * kh * kw; }
  std::int64_t p() const { return oh * ow; }
};

template <typename T>
void im2col(const double* x, const Dims& d, T* col) {
  const std::int64_t p = d.p();
  for (std::int64_t c = 0; c < d.ci; ++c) {
    const double* plane = x + c * d.h * d.w;
    for (std::int64_t i = 0; i < d.kh; ++i) {
      for (std::int64_t j = 0; j < d.kw; ++j) {
        T* row = col + ((c * d.kh + i) * d.kw + j) * p;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + i;
          T* dst = row + oy * d.ow;
          if (iy < 0 || iy >= d.h) {
            for (std::int64_t ox = 0; ox < d.ow; ++ox) dst[ox] = T(0);
            continue;
          }
          const double* src = plane + iy * d.w;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + j;
            dst[ox] = (ix >= 0 && ix < d.w) ? static_cast<T>(src[ix]) : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Dims& d, double* dx) {
  const std::int64_t p = d.p();
  for (std::int64_t c = 0; c < d.ci; ++c) {
    double* plane = dx + c * d.h * d.w;
    for (std::int64_t i = 0; i < d.kh; ++i) {
      for (std::int64_t j = 0; j < d.kw; ++j) {
        const T* row = col + ((c * d.kh + i) * d.kw + j) * p;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + i;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = plane + iy * d.w;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + j;
            if (ix >= 0 && ix < d.w) dst[ix] += static_cast<double>(row[oy * d.ow + ox]);
          }
        }
      }
    }
  }
}

Dims make_dims(const Shape& x, const Shape& w, const ConvGeometry& g, int stride, int pad) {
  return Dims{x.c, x.h, x.w, w.n, w.h, w.w, g.out_h, g.out_w, stride, pad};
}

template <typename T>
RowMat<T> to_matrix(const Tensor& t, std::int64_t rows, std::int64_t cols) {
  RowMat<T> m(rows, cols);
  const auto src = t.data();
  T* dst = m.data();
  for (std::int64_t i = 0; i < rows * cols; ++i) dst[i] = static_cast<T>(src[i]);
  return m;
}

template <typename T>
Tensor forward_impl(const Tensor& x, const Tensor& w, const Tensor& b, const Dims& d) {
  const Shape& xs = x.shape();
  Tensor y({xs.n, d.co, d.oh, d.ow}, x.precision());
  const RowMat<T> wm = to_matrix<T>(w, d.co, d.k());
  const std::int64_t in_stride = d.ci * d.h * d.w;
  const std::int64_t out_stride = d.co * d.p();
  parallel_for(xs.n, [&](std::int64_t n) {
    RowMat<T> col(d.k(), d.p());
    im2col<T>(x.data().data() + n * in_stride, d, col.data());
    RowMat<T> out = wm * col;
    double* dst = y.data().data() + n * out_stride;
    for (std::int64_t o = 0; o < d.co; ++o) {
      const double bias = b[o];
      for (std::int64_t q = 0; q < d.p(); ++q) {
        dst[o * d.p() + q] = static_cast<double>(out(o, q)) + bias;
      }
    }
  });
  y.round_to_precision();
  return y;
}

template <typename T>
ConvGrads backward_impl(const Tensor& x, const Tensor& w, const Tensor& gy, const Dims& d,
                        bool need_dx, bool need_dw, bool need_db) {
  const Shape& xs = x.shape();
  const Precision prec = x.precision();
  ConvGrads g;
  if (need_dx) g.dx = Tensor(xs, prec);
  if (need_dw) g.dw = Tensor(w.shape(), prec);
  if (need_db) g.db = Tensor({d.co, 1, 1, 1}, prec);

  const RowMat<T> wm = to_matrix<T>(w, d.co, d.k());
  const std::int64_t in_stride = d.ci * d.h * d.w;
  const std::int64_t out_stride = d.co * d.p();
  std::vector<RowMat<T>> dw_parts(need_dw ? static_cast<std::size_t>(xs.n) : 0);

  parallel_for(xs.n, [&](std::int64_t n) {
    RowMat<T> gm(d.co, d.p());
    const double* gsrc = gy.data().data() + n * out_stride;
    for (std::int64_t i = 0; i < d.co * d.p(); ++i) gm.data()[i] = static_cast<T>(gsrc[i]);
    RowMat<T> col;
    if (need_dw) {
      col.resize(d.k(), d.p());
      im2col<T>(x.data().data() + n * in_stride, d, col.data());
      dw_parts[static_cast<std::size_t>(n)] = gm * col.transpose();
    }
    if (need_dx) {
      RowMat<T> dcol = wm.transpose() * gm;
      col2im<T>(dcol.data(), d, g.dx.data().data() + n * in_stride);
    }
  });

  if (need_dw) {
    auto dst = g.dw.data();
    for (const auto& part : dw_parts) {
      for (std::int64_t i = 0; i < part.size(); ++i) dst[i] += static_cast<double>(part.data()[i]);
    }
  }
  if (need_db) {
    for (std::int64_t n = 0; n < xs.n; ++n) {
      for (std::int64_t o = 0; o < d.co; ++o) {
        const double* row = gy.data().data() + n * out_stride + o * d.p();
        double s = 0.0;
        for (std::int64_t q = 0; q < d.p(); ++q) s += row[q];
        g.db[o] += s;
      }
    }
  }
  if (active_fault() == Fault::conv2d_backward) {
    if (need_dw) {
      for (double& v : g.dw.data()) v *= 1.001;
    }
    if (need_dx) {
      for (double& v : g.dx.data()) v *= 1.001;
    }
  }
  if (need_dx) g.dx.round_to_precision();
  if (need_dw) g.dw.round_to_precision();
  if (need_db) g.db.round_to_precision();
  return g;
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, const Shape& bias, int stride,
                           int padding) {
  if (stride < 1) throw GeometryError(fmt::format("conv2d: stride must be positive, got {}", stride));
  if (padding < 0) {
    throw GeometryError(fmt::format("conv2d: padding must be non-negative, got {}", padding));
  }
  if (input.c != weight.c) {
    throw DimensionError(fmt::format("conv2d: input has {} channels but weight {} expects {}",
                                     input.c, weight.str(), weight.c));
  }
  if (bias.numel() != weight.n) {
    throw DimensionError(fmt::format("conv2d: bias {} does not match {} output channels",
                                     bias.str(), weight.n));
  }
  const std::int64_t span_h = input.h + 2 * padding - weight.h;
  const std::int64_t span_w = input.w + 2 * padding - weight.w;
  if (weight.h < 1 || weight.w < 1 || span_h < 0 || span_w < 0) {
    throw GeometryError(fmt::format("conv2d: kernel {}x{} does not fit input {} with padding {}",
                                    weight.h, weight.w, input.str(), padding));
  }
  ConvGeometry g{span_h / stride + 1, span_w / stride + 1};
  if (g.out_h <= 0 || g.out_w <= 0) throw GeometryError("conv2d: zero-size spatial output");
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), b.shape(), stride, padding);
  const Dims d = make_dims(x.shape(), w.shape(), g, stride, padding);
  return forward_impl<double>(x, w, b, d);
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, int stride,
                          int padding, bool need_dx, bool need_dw, bool need_db) {
  const ConvGeometry g =
      conv_geometry(x.shape(), w.shape(), Shape{w.shape().n, 1, 1, 1}, stride, padding);
  const Dims d = make_dims(x.shape(), w.shape(), g, stride, padding);
  return backward_impl<double>(x, w, gy, d, need_dx, need_dw, need_db);
}

}  // namespace stsc::kernels
