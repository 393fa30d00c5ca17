#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stsc {

// Error hierarchy shared by every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class DetachedNodeError : public Error {
 public:
  using Error::Error;
};

class PrecisionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Storage is always double; in single mode every produced value is rounded
// to the nearest float so the tensor holds exactly float-representable data.
enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

const char* to_string(Precision p);

struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Rank-4 NCHW tensor with contiguous row-major storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Precision precision = Precision::f64);
  Tensor(Shape shape, std::vector<double> values, Precision precision = Precision::f64);

  static Tensor full(Shape shape, double value, Precision precision = Precision::f64);
  static Tensor scalar(double value, Precision precision = Precision::f64);

  const Shape& shape() const { return shape_; }
  Precision precision() const { return precision_; }
  std::int64_t numel() const { return shape_.numel(); }

  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return values_[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return values_[static_cast<std::size_t>(offset(n, c, h, w))];
  }

  /// Scalar value of a [1,1,1,1] tensor.
  double item() const;

  /// Rounds every value to the tensor's precision (no-op for f64).
  void round_to_precision();
  Tensor to(Precision precision) const;

  bool all_finite() const;

 private:
  Shape shape_{};
  Precision precision_ = Precision::f64;
  std::vector<double> values_;
};

inline double round_to(Precision p, double v) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

/// Bitwise equality of shape, precision and every value.
bool bit_equal(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace stsc
