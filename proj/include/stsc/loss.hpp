#pragma once

#include <vector>

#include "stsc/autograd.hpp"

namespace stsc {

struct MsSsimConfig {
  int window_size = 11;
  double window_sigma = 1.5;
  std::vector<double> scale_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  /// Per-scale terms are clamped to this floor before exponentiation.
  double floor = 1e-6;
};

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> gaussian_window(int size, double sigma);

/// Largest s <= len(scale_weights) with min_side / 2^(s-1) >= window_size.
int usable_scales(std::int64_t min_side, const MsSsimConfig& cfg);

/// First `scales` weights renormalized to sum to one.
std::vector<double> scale_weights(int scales, const MsSsimConfig& cfg);

/// Per-(n,c) local SSIM statistics on one scale: mean contrast-structure term
/// and mean full SSIM term, each [n,c,1,1].
struct SsimTerms {
  Var cs;
  Var ssim;
};
SsimTerms ssim_terms(const Var& a, const Var& b, const MsSsimConfig& cfg);

Var l1_loss(const Var& y, const Var& gt);

/// MS-SSIM in (0,1], averaged over batch and channels.
Var ms_ssim(const Var& y, const Var& gt, const MsSsimConfig& cfg = {});

struct LossTerms {
  Var total;    // lambda * (1 - msssim) + (1 - lambda) * l1
  Var l1;
  Var msssim;
};

LossTerms combined_loss(const Var& y, const Var& gt, double lambda, const MsSsimConfig& cfg = {});

}  // namespace stsc
