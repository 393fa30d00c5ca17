#include "stsc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/core.h>

namespace stsc {

const char* to_string(Precision p) { return p == Precision::f32 ? "single" : "double"; }

std::string Shape::str() const { return fmt::format("[{},{},{},{}]", n, c, h, w); }

namespace {

void check_shape(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw DimensionError("negative tensor dimension in shape " + s.str());
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Precision precision)
    : shape_(shape), precision_(precision) {
  check_shape(shape);
  values_.assign(static_cast<std::size_t>(shape.numel()), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, Precision precision)
    : shape_(shape), precision_(precision), values_(std::move(values)) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values_.size()) != shape.numel()) {
    throw DimensionError(fmt::format("tensor of shape {} needs {} values, got {}", shape.str(),
                                     shape.numel(), values_.size()));
  }
  round_to_precision();
}

Tensor Tensor::full(Shape shape, double value, Precision precision) {
  return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), value),
                precision);
}

Tensor Tensor::scalar(double value, Precision precision) {
  return Tensor({1, 1, 1, 1}, {value}, precision);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw RankError("item() requires a single-element tensor, got shape " + shape_.str());
  }
  return values_[0];
}

void Tensor::round_to_precision() {
  if (precision_ == Precision::f32) {
    for (double& v : values_) v = static_cast<double>(static_cast<float>(v));
  }
}

Tensor Tensor::to(Precision precision) const {
  Tensor out = *this;
  out.precision_ = precision;
  out.round_to_precision();
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()) || a.precision() != b.precision()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("max_abs_diff shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace stsc
