#pragma once

// Raw forward/backward kernels behind the differentiable ops.

#include <cstdint>

#include "stsc/tensor.hpp"

namespace stsc::kernels {

struct ConvGeometry {
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, const Shape& bias, int stride,
                           int padding);

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

struct ConvGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, int stride,
                          int padding, bool need_dx, bool need_dw, bool need_db);

}  // namespace stsc::kernels
