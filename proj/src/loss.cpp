#include "stsc/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

namespace stsc {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    g[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= total;
  return g;
}

int usable_scales(std::int64_t min_side, const MsSsimConfig& cfg) {
  int s = 0;
  for (std::size_t k = 0; k < cfg.scale_weights.size(); ++k) {
    if ((min_side >> k) >= cfg.window_size) s = static_cast<int>(k) + 1;
  }
  return s;
}

std::vector<double> scale_weights(int scales, const MsSsimConfig& cfg) {
  std::vector<double> w(cfg.scale_weights.begin(), cfg.scale_weights.begin() + scales);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

SsimTerms ssim_terms(const Var& a, const Var& b, const MsSsimConfig& cfg) {
  const std::vector<double> win = gaussian_window(cfg.window_size, cfg.window_sigma);
  Var mu_a = gaussian_blur(a, win);
  Var mu_b = gaussian_blur(b, win);
  Var mu_aa = square(mu_a);
  Var mu_bb = square(mu_b);
  Var mu_ab = mul(mu_a, mu_b);
  Var var_a = sub(gaussian_blur(square(a), win), mu_aa);
  Var var_b = sub(gaussian_blur(square(b), win), mu_bb);
  Var cov = sub(gaussian_blur(mul(a, b), win), mu_ab);

  Var cs_map = div(add_scalar(scale(cov, 2.0), cfg.c2), add_scalar(add(var_a, var_b), cfg.c2));
  Var l_map = div(add_scalar(scale(mu_ab, 2.0), cfg.c1), add_scalar(add(mu_aa, mu_bb), cfg.c1));
  return {global_avg_pool(cs_map), global_avg_pool(mul(l_map, cs_map))};
}

Var l1_loss(const Var& y, const Var& gt) {
  if (!(y.shape() == gt.shape())) {
    throw DimensionError("l1_loss: shape mismatch " + y.shape().str() + " vs " + gt.shape().str());
  }
  return mean_all(abs(sub(y, gt)));
}

Var ms_ssim(const Var& y, const Var& gt, const MsSsimConfig& cfg) {
  if (!(y.shape() == gt.shape())) {
    throw DimensionError("ms_ssim: shape mismatch " + y.shape().str() + " vs " + gt.shape().str());
  }
  const std::int64_t side = std::min(y.shape().h, y.shape().w);
  const int scales = usable_scales(side, cfg);
  if (scales < 1) {
    throw GeometryError(fmt::format("ms_ssim: image side {} smaller than window {}", side,
                                    cfg.window_size));
  }
  const std::vector<double> weights = scale_weights(scales, cfg);
  Var a = y;
  Var b = gt;
  Var product;
  for (int j = 0; j < scales; ++j) {
    SsimTerms t = ssim_terms(a, b, cfg);
    const bool last = j == scales - 1;
    Var term = pow_scalar(clamp_min(last ? t.ssim : t.cs, cfg.floor),
                          weights[static_cast<std::size_t>(j)]);
    product = j == 0 ? term : mul(product, term);
    if (!last) {
      if (a.shape().h % 2 != 0 || a.shape().w % 2 != 0) {
        throw GeometryError(fmt::format("ms_ssim: scale {} has odd size {}x{}", j + 1,
                                        a.shape().h, a.shape().w));
      }
      a = resample(a, ResampleKind::avg_pool_k2);
      b = resample(b, ResampleKind::avg_pool_k2);
    }
  }
  return mean_all(product);
}

LossTerms combined_loss(const Var& y, const Var& gt, double lambda, const MsSsimConfig& cfg) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError(fmt::format("combined_loss: lambda {} outside [0,1]", lambda));
  }
  LossTerms t;
  t.l1 = l1_loss(y, gt);
  t.msssim = ms_ssim(y, gt, cfg);
  Var ssim_loss = add_scalar(scale(t.msssim, -1.0), 1.0);
  t.total = add(scale(ssim_loss, lambda), scale(t.l1, 1.0 - lambda));
  return t;
}

}  // namespace stsc
