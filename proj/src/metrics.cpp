#include "stsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/core.h>

#include "stsc/io.hpp"
#include "stsc/runtime.hpp"

namespace stsc {

namespace fs = std::filesystem;

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double sum = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim_metric(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  if (std::min(a.shape().h, a.shape().w) < cfg.window_size) {
    throw GeometryError(fmt::format("ssim: image {}x{} smaller than window {}", a.shape().h,
                                    a.shape().w, cfg.window_size));
  }
  const SsimTerms t = ssim_terms(Var(a.to(Precision::f64)), Var(b.to(Precision::f64)), cfg);
  const Tensor& v = t.ssim.value();
  double sum = 0.0;
  for (double x : v.data()) sum += x;
  return sum / static_cast<double>(v.numel());
}

// ---- UIQM ---------------------------------------------------------------------

double alpha_trimmed_mean(std::vector<double> values, double alpha_left, double alpha_right) {
  const auto k = static_cast<std::int64_t>(values.size());
  const auto tl = static_cast<std::int64_t>(std::ceil(alpha_left * static_cast<double>(k)));
  const auto tr = static_cast<std::int64_t>(std::floor(alpha_right * static_cast<double>(k)));
  const std::int64_t kept = k - tl - tr;
  if (kept <= 0) return 0.0;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (std::int64_t i = tl; i < k - tr; ++i) sum += values[static_cast<std::size_t>(i)];
  return sum / static_cast<double>(kept);
}

std::vector<double> sobel_magnitude(const std::vector<double>& p, std::int64_t h, std::int64_t w) {
  auto px = [&](std::int64_t y, std::int64_t x) {
    y = std::clamp<std::int64_t>(y, 0, h - 1);
    x = std::clamp<std::int64_t>(x, 0, w - 1);
    return p[static_cast<std::size_t>(y * w + x)];
  };
  std::vector<double> out(p.size());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
      out[static_cast<std::size_t>(y * w + x)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

double eme(const std::vector<double>& p, std::int64_t h, std::int64_t w, int block) {
  const std::int64_t k1 = h / block;
  const std::int64_t k2 = w / block;
  double sum = 0.0;
  for (std::int64_t by = 0; by < k1; ++by) {
    for (std::int64_t bx = 0; bx < k2; ++bx) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::int64_t y = by * block; y < (by + 1) * block; ++y) {
        for (std::int64_t x = bx * block; x < (bx + 1) * block; ++x) {
          const double v = p[static_cast<std::size_t>(y * w + x)];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      if (lo > 0.0 && hi > 0.0) sum += std::log(hi / lo);
    }
  }
  return 2.0 * sum / static_cast<double>(k1 * k2);
}

namespace {

double variance_about(const std::vector<double>& v, double mu) {
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size());
}

double log_amee(const std::vector<std::vector<double>>& planes, std::int64_t h, std::int64_t w,
                int block) {
  const std::int64_t k1 = h / block;
  const std::int64_t k2 = w / block;
  double sum = 0.0;
  for (std::int64_t by = 0; by < k1; ++by) {
    for (std::int64_t bx = 0; bx < k2; ++bx) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const auto& p : planes) {
        for (std::int64_t y = by * block; y < (by + 1) * block; ++y) {
          for (std::int64_t x = bx * block; x < (bx + 1) * block; ++x) {
            const double v = p[static_cast<std::size_t>(y * w + x)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
      }
      const double top = hi - lo;
      const double bot = hi + lo;
      if (top == 0.0 || bot == 0.0) continue;
      const double r = top / bot;
      sum += r * std::log(r);
    }
  }
  return -sum / static_cast<double>(k1 * k2);
}

}  // namespace

UiqmResult uiqm(const Tensor& image, const UiqmParams& prm) {
  const Shape& s = image.shape();
  if (s.c != 3) throw DimensionError("uiqm: expected 3 channels, got " + s.str());
  if (s.h < prm.block || s.w < prm.block) {
    throw GeometryError(fmt::format("uiqm: image {}x{} smaller than block {}", s.h, s.w, prm.block));
  }
  const std::int64_t h = s.h;
  const std::int64_t w = s.w;
  const auto plane = static_cast<std::size_t>(h * w);
  std::vector<std::vector<double>> rgb(3, std::vector<double>(plane));
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        rgb[c][static_cast<std::size_t>(y * w + x)] = image.at(0, c, y, x) * 255.0;
      }
    }
  }

  std::vector<double> rg(plane);
  std::vector<double> yb(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    rg[i] = rgb[0][i] - rgb[1][i];
    yb[i] = (rgb[0][i] + rgb[1][i]) / 2.0 - rgb[2][i];
  }
  const double mu_rg = alpha_trimmed_mean(rg, prm.alpha_left, prm.alpha_right);
  const double mu_yb = alpha_trimmed_mean(yb, prm.alpha_left, prm.alpha_right);
  const double var_rg = variance_about(rg, mu_rg);
  const double var_yb = variance_about(yb, mu_yb);

  UiqmResult r;
  r.uicm = -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) +
           0.1586 * std::sqrt(var_rg + var_yb);

  const double lambdas[3] = {prm.lambda_r, prm.lambda_g, prm.lambda_b};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> edges = sobel_magnitude(rgb[c], h, w);
    for (std::size_t i = 0; i < plane; ++i) edges[i] *= rgb[c][i];
    r.uism += lambdas[c] * eme(edges, h, w, prm.block);
  }

  r.uiconm = log_amee(rgb, h, w, prm.block);
  r.uiqm = prm.c_uicm * r.uicm + prm.c_uism * r.uism + prm.c_uiconm * r.uiconm;
  return r;
}

// ---- directory evaluation -------------------------------------------------------

MetricSet parse_metrics(const std::string& list) {
  MetricSet m;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "psnr") {
      m.psnr = true;
    } else if (item == "ssim") {
      m.ssim = true;
    } else if (item == "uiqm") {
      m.uiqm = true;
    } else {
      throw ConfigError("unknown metric '" + item + "' (expected psnr, ssim, uiqm)");
    }
  }
  if (!m.any()) throw ConfigError("no metrics requested");
  return m;
}

MetricRow average_rows(const std::vector<MetricRow>& rows, const MetricSet& metrics) {
  MetricRow mean;
  mean.name = "mean";
  if (rows.empty()) return mean;
  const auto n = static_cast<double>(rows.size());
  if (metrics.psnr) {
    double s = 0.0;
    for (const auto& r : rows) s += r.psnr_db.value_or(0.0);
    mean.psnr_db = s / n;
  }
  if (metrics.ssim) {
    double s = 0.0;
    for (const auto& r : rows) s += r.ssim.value_or(0.0);
    mean.ssim = s / n;
  }
  if (metrics.uiqm) {
    UiqmResult u;
    for (const auto& r : rows) {
      const UiqmResult v = r.uiqm.value_or(UiqmResult{});
      u.uiqm += v.uiqm;
      u.uicm += v.uicm;
      u.uism += v.uism;
      u.uiconm += v.uiconm;
    }
    u.uiqm /= n;
    u.uicm /= n;
    u.uism /= n;
    u.uiconm /= n;
    mean.uiqm = u;
  }
  return mean;
}

MetricReport evaluate_dir(const fs::path& enhanced_dir, const std::optional<fs::path>& reference_dir,
                          const MetricSet& metrics) {
  if (metrics.full_reference() && !reference_dir) {
    throw ConfigError("psnr/ssim require a reference directory");
  }
  if (!fs::is_directory(enhanced_dir)) {
    throw LayoutError("enhanced directory does not exist: " + enhanced_dir.string());
  }
  if (reference_dir && !fs::is_directory(*reference_dir)) {
    throw LayoutError("reference directory does not exist: " + reference_dir->string());
  }
  MetricReport report;
  std::vector<std::string> names;
  for (const auto& name : list_files(enhanced_dir)) {
    if (metrics.full_reference() && !fs::is_regular_file(*reference_dir / name)) {
      report.errors.push_back(name + ": no reference partner");
      report.warnings.push_back("skipped " + name);
      continue;
    }
    names.push_back(name);
  }

  std::vector<std::optional<MetricRow>> slots(names.size());
  std::vector<std::string> failures(names.size());
  parallel_for(static_cast<std::int64_t>(names.size()), [&](std::int64_t i) {
    const auto idx = static_cast<std::size_t>(i);
    const std::string& name = names[idx];
    try {
      const Tensor enh = read_image(enhanced_dir / name);
      MetricRow row;
      row.name = name;
      if (metrics.full_reference()) {
        const Tensor ref = read_image(*reference_dir / name);
        if (metrics.psnr) row.psnr_db = psnr(enh, ref);
        if (metrics.ssim) row.ssim = ssim_metric(enh, ref);
      }
      if (metrics.uiqm) row.uiqm = uiqm(enh);
      slots[idx] = std::move(row);
    } catch (const Error& e) {
      failures[idx] = name + ": " + e.what();
    }
  });
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (slots[i]) {
      report.rows.push_back(std::move(*slots[i]));
    } else {
      report.errors.push_back(failures[i]);
      report.warnings.push_back("skipped " + names[i]);
    }
  }
  report.mean = average_rows(report.rows, metrics);
  return report;
}

namespace {

std::string fmt_value(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return fmt::format("{:.6f}", *v);
}

void write_row(const MetricRow& r, std::ostream& out) {
  std::optional<double> u, c, s, k;
  if (r.uiqm) {
    u = r.uiqm->uiqm;
    c = r.uiqm->uicm;
    s = r.uiqm->uism;
    k = r.uiqm->uiconm;
  }
  out << r.name << ',' << fmt_value(r.psnr_db) << ',' << fmt_value(r.ssim) << ',' << fmt_value(u)
      << ',' << fmt_value(c) << ',' << fmt_value(s) << ',' << fmt_value(k) << '\n';
}

}  // namespace

void write_csv(const MetricReport& report, std::ostream& out) {
  out << "name,psnr_db,ssim,uiqm,uicm,uism,uiconm\n";
  for (const auto& r : report.rows) write_row(r, out);
  if (!report.rows.empty()) write_row(report.mean, out);
}

}  // namespace stsc
