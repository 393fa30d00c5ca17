#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stsc/tensor.hpp"

namespace testing_support {

using stsc::Shape;
using stsc::Tensor;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            stsc::Precision p = stsc::Precision::f64) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) x = d(rng);
  return Tensor(s, std::move(v), p);
}

/// Direct cross-correlation with zero padding, one output site at a time.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::int64_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::int64_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor y({xs.n, ws.n, oh, ow});
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t o = 0; o < ws.n; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::int64_t c = 0; c < ws.c; ++c)
            for (std::int64_t ky = 0; ky < ws.h; ++ky)
              for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                const std::int64_t yy = i * stride - pad + ky;
                const std::int64_t xx = j * stride - pad + kx;
                if (yy < 0 || yy >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += x.at(n, c, yy, xx) * w.at(o, c, ky, kx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("stsc_" + tag + "_" + std::to_string(rng() % 1000000000));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Smooth synthetic scene in [0,1]: low-frequency color waves plus a few blobs.
inline Tensor smooth_scene(std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img({1, 3, h, w});
  double fx[3], fy[3], ph[3], base[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 1.0 + 3.0 * u(rng);
    fy[c] = 1.0 + 3.0 * u(rng);
    ph[c] = 6.283 * u(rng);
    base[c] = 0.3 + 0.4 * u(rng);
  }
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = base[c] + 0.25 * std::sin(fx[c] * 6.283 * x / w + ph[c]) *
                                       std::cos(fy[c] * 6.283 * y / h + ph[c]);
        img.at(0, c, y, x) = std::clamp(v, 0.02, 0.98);
      }
  return img;
}

/// Underwater-style degradation: blue-green cast plus haze.
inline Tensor degrade(const Tensor& clean) {
  const double gain[3] = {0.55, 0.85, 0.95};
  const double veil[3] = {0.05, 0.25, 0.30};
  Tensor out = clean;
  const Shape s = clean.shape();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x)
        out.at(0, c, y, x) = 0.8 * gain[c] * clean.at(0, c, y, x) + veil[c];
  return out;
}

}  // namespace testing_support
