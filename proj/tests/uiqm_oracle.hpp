#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stsc/tensor.hpp"

namespace testing_support {

struct UiqmOracle {
  double uiqm, uicm, uism, uiconm;
};

/// Brute-force UIQM on batch item 0, values scaled to 0..255.
inline UiqmOracle oracle_uiqm(const stsc::Tensor& img) {
  const std::int64_t h = img.shape().h, w = img.shape().w;
  auto px = [&](int c, std::int64_t y, std::int64_t x) { return 255.0 * img.at(0, c, y, x); };

  // Colorfulness: asymmetric alpha-trimmed mean, variance about that mean.
  std::vector<double> rg, yb;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      rg.push_back(px(0, y, x) - px(1, y, x));
      yb.push_back(0.5 * (px(0, y, x) + px(1, y, x)) - px(2, y, x));
    }
  const double k = static_cast<double>(rg.size());
  const auto lo = static_cast<std::size_t>(std::ceil(0.1 * k));
  const auto hi = rg.size() - static_cast<std::size_t>(std::floor(0.1 * k));
  auto trimmed = [&](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += v[i];
    return s / static_cast<double>(hi - lo);
  };
  auto spread = [&](const std::vector<double>& v, double mu) {
    double s = 0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / k;
  };
  const double mrg = trimmed(rg), myb = trimmed(yb);
  const double uicm = -0.0268 * std::hypot(mrg, myb) +
                      0.1586 * std::sqrt(spread(rg, mrg) + spread(yb, myb));

  // Sharpness: Sobel magnitude (replicated border) times the channel, block EME.
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const double weights[3] = {0.299, 0.587, 0.114};
  const std::int64_t b1 = h / 8, b2 = w / 8;
  double uism = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> e(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double gx = 0, gy = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::int64_t yy = std::min(std::max<std::int64_t>(y + dy, 0), h - 1);
            const std::int64_t xx = std::min(std::max<std::int64_t>(x + dx, 0), w - 1);
            gx += kx[dy + 1][dx + 1] * px(c, yy, xx);
            gy += ky[dy + 1][dx + 1] * px(c, yy, xx);
          }
        e[static_cast<std::size_t>(y * w + x)] = std::sqrt(gx * gx + gy * gy) * px(c, y, x);
      }
    double acc = 0;
    for (std::int64_t by = 0; by < b1; ++by)
      for (std::int64_t bx = 0; bx < b2; ++bx) {
        double mn = 1e300, mx = -1e300;
        for (std::int64_t y = by * 8; y < by * 8 + 8; ++y)
          for (std::int64_t x = bx * 8; x < bx * 8 + 8; ++x) {
            mn = std::min(mn, e[static_cast<std::size_t>(y * w + x)]);
            mx = std::max(mx, e[static_cast<std::size_t>(y * w + x)]);
          }
        if (mn > 0 && mx > 0) acc += std::log(mx / mn);
      }
    uism += weights[c] * 2.0 / static_cast<double>(b1 * b2) * acc;
  }

  // Contrast: logAMEE over joint-channel 8x8 blocks.
  double con = 0;
  for (std::int64_t by = 0; by < b1; ++by)
    for (std::int64_t bx = 0; bx < b2; ++bx) {
      double mn = 1e300, mx = -1e300;
      for (int c = 0; c < 3; ++c)
        for (std::int64_t y = by * 8; y < by * 8 + 8; ++y)
          for (std::int64_t x = bx * 8; x < bx * 8 + 8; ++x) {
            mn = std::min(mn, px(c, y, x));
            mx = std::max(mx, px(c, y, x));
          }
      if (mx - mn == 0 || mx + mn == 0) continue;
      const double r = (mx - mn) / (mx + mn);
      con += r * std::log(r);
    }
  const double uiconm = -con / static_cast<double>(b1 * b2);
  return {0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm, uicm, uism, uiconm};
}

}  // namespace testing_support
