#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stsc/loss.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

/// 10 log10(peak^2 / MSE) with MSE over every channel and pixel jointly.
/// Identical inputs return +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-scale SSIM: mean of the Gaussian-window SSIM map over all channels.
double ssim_metric(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg = {});

struct UiqmParams {
  double alpha_left = 0.1;
  double alpha_right = 0.1;
  int block = 8;
  double c_uicm = 0.0282;
  double c_uism = 0.2953;
  double c_uiconm = 3.5753;
  /// Channel weights of the sharpness term (R, G, B).
  double lambda_r = 0.299;
  double lambda_g = 0.587;
  double lambda_b = 0.114;
};

struct UiqmResult {
  double uiqm = 0.0;
  double uicm = 0.0;
  double uism = 0.0;
  double uiconm = 0.0;
};

/// Evaluated on batch item 0 after scaling to the 0..255 range.
UiqmResult uiqm(const Tensor& image, const UiqmParams& params = {});

// Building blocks, exposed for testing.
double alpha_trimmed_mean(std::vector<double> values, double alpha_left, double alpha_right);
/// Sobel gradient magnitude with replicated borders; `plane` is row-major h x w.
std::vector<double> sobel_magnitude(const std::vector<double>& plane, std::int64_t h, std::int64_t w);
double eme(const std::vector<double>& plane, std::int64_t h, std::int64_t w, int block);

struct MetricSet {
  bool psnr = false;
  bool ssim = false;
  bool uiqm = false;
  bool full_reference() const { return psnr || ssim; }
  bool any() const { return psnr || ssim || uiqm; }
};

/// Parses a comma-separated list such as "psnr,ssim,uiqm".
MetricSet parse_metrics(const std::string& list);

struct MetricRow {
  std::string name;
  std::optional<double> psnr_db;
  std::optional<double> ssim;
  std::optional<UiqmResult> uiqm;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // sorted by name
  MetricRow mean;               // name "mean"
  std::vector<std::string> warnings;
  std::vector<std::string> errors;
  bool empty() const { return rows.empty(); }
};

MetricRow average_rows(const std::vector<MetricRow>& rows, const MetricSet& metrics);

/// Scores every file of `enhanced_dir`; full-reference metrics pair by filename
/// with `reference_dir`. Unpaired or unreadable files are skipped and listed.
MetricReport evaluate_dir(const std::filesystem::path& enhanced_dir,
                          const std::optional<std::filesystem::path>& reference_dir,
                          const MetricSet& metrics);

/// Header `name,psnr_db,ssim,uiqm,uicm,uism,uiconm`; metrics not requested are
/// left blank and an infinite PSNR is written as `inf`.
void write_csv(const MetricReport& report, std::ostream& out);

}  // namespace stsc
