// Differentiable primitives recorded on the tape.

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/core.h>

#include "kernels.hpp"
#include "stsc/autograd.hpp"

namespace stsc {

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), t.precision()); }

Tensor map_unary(const Tensor& x, auto&& fn) {
  Tensor y = zeros_like(x);
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  y.round_to_precision();
  return y;
}

void require_same_precision(const Var& a, const Var& b, const char* op) {
  if (a.precision() != b.precision()) {
    throw PrecisionError(fmt::format("{}: mixed precision inputs", op));
  }
}

// ---- resampling kernels -------------------------------------------------

Tensor pool_by_factor(const Tensor& x, std::int64_t fh, std::int64_t fw) {
  const Shape& s = x.shape();
  Tensor y({s.n, s.c, s.h / fh, s.w / fw}, x.precision());
  const double inv = 1.0 / static_cast<double>(fh * fw);
  const Shape& o = y.shape();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = x.data().data() + p * s.plane();
    double* dst = y.data().data() + p * o.plane();
    for (std::int64_t oy = 0; oy < o.h; ++oy) {
      for (std::int64_t ox = 0; ox < o.w; ++ox) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < fh; ++i) {
          for (std::int64_t j = 0; j < fw; ++j) acc += src[(oy * fh + i) * s.w + ox * fw + j];
        }
        dst[oy * o.w + ox] = acc * inv;
      }
    }
  }
  y.round_to_precision();
  return y;
}

void pool_by_factor_backward(const Tensor& gy, std::int64_t fh, std::int64_t fw, Tensor& gx) {
  const Shape& s = gx.shape();
  const Shape& o = gy.shape();
  const double inv = 1.0 / static_cast<double>(fh * fw);
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = gy.data().data() + p * o.plane();
    double* dst = gx.data().data() + p * s.plane();
    for (std::int64_t y = 0; y < s.h; ++y) {
      for (std::int64_t x = 0; x < s.w; ++x) dst[y * s.w + x] += src[(y / fh) * o.w + x / fw] * inv;
    }
  }
}

Tensor upsample_by_factor(const Tensor& x, std::int64_t fh, std::int64_t fw) {
  const Shape& s = x.shape();
  Tensor y({s.n, s.c, s.h * fh, s.w * fw}, x.precision());
  const Shape& o = y.shape();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = x.data().data() + p * s.plane();
    double* dst = y.data().data() + p * o.plane();
    for (std::int64_t yy = 0; yy < o.h; ++yy) {
      for (std::int64_t xx = 0; xx < o.w; ++xx) dst[yy * o.w + xx] = src[(yy / fh) * s.w + xx / fw];
    }
  }
  return y;
}

void upsample_by_factor_backward(const Tensor& gy, std::int64_t fh, std::int64_t fw, Tensor& gx) {
  const Shape& s = gx.shape();
  const Shape& o = gy.shape();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = gy.data().data() + p * o.plane();
    double* dst = gx.data().data() + p * s.plane();
    for (std::int64_t y = 0; y < s.h; ++y) {
      for (std::int64_t x = 0; x < s.w; ++x) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < fh; ++i) {
          for (std::int64_t j = 0; j < fw; ++j) acc += src[(y * fh + i) * o.w + x * fw + j];
        }
        dst[y * s.w + x] += acc;
      }
    }
  }
}

// Pixel-unshuffle ordering: out channel = c*4 + (row-in-block)*2 + col-in-block.
Tensor space_to_depth(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor y({s.n, s.c * 4, s.h / 2, s.w / 2}, x.precision());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t a = 0; a < 2; ++a) {
        for (std::int64_t b = 0; b < 2; ++b) {
          for (std::int64_t yy = 0; yy < s.h / 2; ++yy) {
            for (std::int64_t xx = 0; xx < s.w / 2; ++xx) {
              y.at(n, c * 4 + a * 2 + b, yy, xx) = x.at(n, c, 2 * yy + a, 2 * xx + b);
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor depth_to_space(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor y({s.n, s.c / 4, s.h * 2, s.w * 2}, x.precision());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c / 4; ++c) {
      for (std::int64_t a = 0; a < 2; ++a) {
        for (std::int64_t b = 0; b < 2; ++b) {
          for (std::int64_t yy = 0; yy < s.h; ++yy) {
            for (std::int64_t xx = 0; xx < s.w; ++xx) {
              y.at(n, c, 2 * yy + a, 2 * xx + b) = x.at(n, c * 4 + a * 2 + b, yy, xx);
            }
          }
        }
      }
    }
  }
  return y;
}

struct Window {
  std::int64_t begin;
  std::int64_t end;
};

Window adaptive_window(std::int64_t i, std::int64_t in, std::int64_t out) {
  const std::int64_t begin = (i * in) / out;
  const std::int64_t end = ((i + 1) * in + out - 1) / out;
  return {begin, end};
}

std::int64_t nearest_source(std::int64_t i, std::int64_t in, std::int64_t out) {
  return std::min((i * in) / out, in - 1);
}

void require_even(const Shape& s, const char* op) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw GeometryError(fmt::format("{}: spatial size {}x{} must be even", op, s.h, s.w));
  }
}

void require_positive_target(std::int64_t th, std::int64_t tw, const char* op) {
  if (th < 1 || tw < 1) {
    throw GeometryError(fmt::format("{}: target size {}x{} must be positive", op, th, tw));
  }
}

}  // namespace

// ---- convolution and activations -----------------------------------------

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
  require_same_precision(input, weight, "conv2d");
  require_same_precision(input, bias, "conv2d");
  Tensor y = kernels::conv2d_forward(input.value(), weight.value(), bias.value(), stride, padding);
  auto xs = input.shared();
  auto ws = weight.shared();
  return Tape::record(
      OpKind::conv2d, {&input, &weight, &bias}, std::move(y),
      [xs, ws, stride, padding](const Tensor& gy, std::span<Tensor* const> slots) {
        auto g = kernels::conv2d_backward(*xs, *ws, gy, stride, padding, slots[0] != nullptr,
                                          slots[1] != nullptr, slots[2] != nullptr);
        if (slots[0]) accumulate(*slots[0], g.dx);
        if (slots[1]) accumulate(*slots[1], g.dw);
        if (slots[2]) accumulate(*slots[2], g.db);
      });
}

Var relu(const Var& input) {
  Tensor y = map_unary(input.value(), [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; });
  auto ys = std::make_shared<const Tensor>(y);
  return Tape::record(OpKind::relu, {&input}, std::move(y),
                      [ys](const Tensor& gy, std::span<Tensor* const> slots) {
                        auto d = slots[0]->data();
                        for (std::size_t i = 0; i < d.size(); ++i) {
                          if ((*ys).data()[i] > 0.0) d[i] += gy.data()[i];
                        }
                      });
}

Var sigmoid(const Var& input) {
  Tensor y = map_unary(input.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  auto ys = std::make_shared<const Tensor>(y);
  return Tape::record(OpKind::sigmoid, {&input}, std::move(y),
                      [ys](const Tensor& gy, std::span<Tensor* const> slots) {
                        auto d = slots[0]->data();
                        auto s = ys->data();
                        for (std::size_t i = 0; i < d.size(); ++i) {
                          d[i] += gy.data()[i] * s[i] * (1.0 - s[i]);
                        }
                      });
}

Var activation(const Var& input, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(input);
    case Activation::sigmoid: return sigmoid(input);
    case Activation::none: break;
  }
  return input;
}

// ---- resampling -----------------------------------------------------------

Var resample(const Var& input, ResampleKind kind, std::int64_t target_h, std::int64_t target_w) {
  const Shape s = input.shape();
  switch (kind) {
    case ResampleKind::avg_pool_k2: {
      require_even(s, "avg_pool_k2");
      return Tape::record(OpKind::avg_pool_k2, {&input}, pool_by_factor(input.value(), 2, 2),
                          [](const Tensor& gy, std::span<Tensor* const> slots) {
                            pool_by_factor_backward(gy, 2, 2, *slots[0]);
                          });
    }
    case ResampleKind::nearest_up_x2:
      return Tape::record(OpKind::nearest_up_x2, {&input}, upsample_by_factor(input.value(), 2, 2),
                          [](const Tensor& gy, std::span<Tensor* const> slots) {
                            upsample_by_factor_backward(gy, 2, 2, *slots[0]);
                          });
    case ResampleKind::avg_pool_to: {
      require_positive_target(target_h, target_w, "avg_pool_to");
      if (s.h % target_h != 0 || s.w % target_w != 0) {
        throw GeometryError(fmt::format("avg_pool_to: {}x{} is not an integer multiple of {}x{}",
                                        s.h, s.w, target_h, target_w));
      }
      const std::int64_t fh = s.h / target_h;
      const std::int64_t fw = s.w / target_w;
      return Tape::record(OpKind::avg_pool_to, {&input}, pool_by_factor(input.value(), fh, fw),
                          [fh, fw](const Tensor& gy, std::span<Tensor* const> slots) {
                            pool_by_factor_backward(gy, fh, fw, *slots[0]);
                          });
    }
    case ResampleKind::nearest_to: {
      require_positive_target(target_h, target_w, "nearest_to");
      if (target_h % s.h != 0 || target_w % s.w != 0) {
        throw GeometryError(fmt::format("nearest_to: {}x{} is not an integer multiple of {}x{}",
                                        target_h, target_w, s.h, s.w));
      }
      const std::int64_t fh = target_h / s.h;
      const std::int64_t fw = target_w / s.w;
      return Tape::record(OpKind::nearest_to, {&input}, upsample_by_factor(input.value(), fh, fw),
                          [fh, fw](const Tensor& gy, std::span<Tensor* const> slots) {
                            upsample_by_factor_backward(gy, fh, fw, *slots[0]);
                          });
    }
    case ResampleKind::space_to_depth_x2: {
      require_even(s, "space_to_depth_x2");
      return Tape::record(OpKind::space_to_depth_x2, {&input}, space_to_depth(input.value()),
                          [](const Tensor& gy, std::span<Tensor* const> slots) {
                            accumulate(*slots[0], depth_to_space(gy));
                          });
    }
    case ResampleKind::depth_to_space_x2: {
      if (s.c % 4 != 0) {
        throw GeometryError(fmt::format("depth_to_space_x2: {} channels not divisible by 4", s.c));
      }
      return Tape::record(OpKind::depth_to_space_x2, {&input}, depth_to_space(input.value()),
                          [](const Tensor& gy, std::span<Tensor* const> slots) {
                            accumulate(*slots[0], space_to_depth(gy));
                          });
    }
    case ResampleKind::max_pool_k2: {
      require_even(s, "max_pool_k2");
      const Tensor& x = input.value();
      Tensor y({s.n, s.c, s.h / 2, s.w / 2}, x.precision());
      auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(y.numel()));
      const Shape& o = y.shape();
      for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t oy = 0; oy < o.h; ++oy) {
          for (std::int64_t ox = 0; ox < o.w; ++ox) {
            std::int64_t best = p * s.plane() + (2 * oy) * s.w + 2 * ox;
            for (std::int64_t i = 0; i < 2; ++i) {
              for (std::int64_t j = 0; j < 2; ++j) {
                const std::int64_t idx = p * s.plane() + (2 * oy + i) * s.w + 2 * ox + j;
                if (x[idx] > x[best]) best = idx;
              }
            }
            const std::int64_t out_idx = p * o.plane() + oy * o.w + ox;
            y[out_idx] = x[best];
            (*argmax)[static_cast<std::size_t>(out_idx)] = best;
          }
        }
      }
      return Tape::record(OpKind::max_pool_k2, {&input}, std::move(y),
                          [argmax](const Tensor& gy, std::span<Tensor* const> slots) {
                            for (std::int64_t i = 0; i < gy.numel(); ++i) {
                              (*slots[0])[(*argmax)[static_cast<std::size_t>(i)]] += gy[i];
                            }
                          });
    }
    case ResampleKind::adaptive_avg_pool: {
      require_positive_target(target_h, target_w, "adaptive_avg_pool");
      if (s.h < 1 || s.w < 1) throw GeometryError("adaptive_avg_pool: empty input");
      const Tensor& x = input.value();
      Tensor y({s.n, s.c, target_h, target_w}, x.precision());
      for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        const double* src = x.data().data() + p * s.plane();
        for (std::int64_t oy = 0; oy < target_h; ++oy) {
          const Window wy = adaptive_window(oy, s.h, target_h);
          for (std::int64_t ox = 0; ox < target_w; ++ox) {
            const Window wx = adaptive_window(ox, s.w, target_w);
            double acc = 0.0;
            for (std::int64_t yy = wy.begin; yy < wy.end; ++yy) {
              for (std::int64_t xx = wx.begin; xx < wx.end; ++xx) acc += src[yy * s.w + xx];
            }
            y[p * target_h * target_w + oy * target_w + ox] =
                acc / static_cast<double>((wy.end - wy.begin) * (wx.end - wx.begin));
          }
        }
      }
      y.round_to_precision();
      return Tape::record(
          OpKind::adaptive_avg_pool, {&input}, std::move(y),
          [s, target_h, target_w](const Tensor& gy, std::span<Tensor* const> slots) {
            for (std::int64_t p = 0; p < s.n * s.c; ++p) {
              double* dst = slots[0]->data().data() + p * s.plane();
              for (std::int64_t oy = 0; oy < target_h; ++oy) {
                const Window wy = adaptive_window(oy, s.h, target_h);
                for (std::int64_t ox = 0; ox < target_w; ++ox) {
                  const Window wx = adaptive_window(ox, s.w, target_w);
                  const double g = gy[p * target_h * target_w + oy * target_w + ox] /
                                   static_cast<double>((wy.end - wy.begin) * (wx.end - wx.begin));
                  for (std::int64_t yy = wy.begin; yy < wy.end; ++yy) {
                    for (std::int64_t xx = wx.begin; xx < wx.end; ++xx) dst[yy * s.w + xx] += g;
                  }
                }
              }
            }
          });
    }
    case ResampleKind::nearest_resize: {
      require_positive_target(target_h, target_w, "nearest_resize");
      if (s.h < 1 || s.w < 1) throw GeometryError("nearest_resize: empty input");
      const Tensor& x = input.value();
      Tensor y({s.n, s.c, target_h, target_w}, x.precision());
      for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t oy = 0; oy < target_h; ++oy) {
          const std::int64_t sy = nearest_source(oy, s.h, target_h);
          for (std::int64_t ox = 0; ox < target_w; ++ox) {
            y[p * target_h * target_w + oy * target_w + ox] =
                x[p * s.plane() + sy * s.w + nearest_source(ox, s.w, target_w)];
          }
        }
      }
      return Tape::record(
          OpKind::nearest_resize, {&input}, std::move(y),
          [s, target_h, target_w](const Tensor& gy, std::span<Tensor* const> slots) {
            for (std::int64_t p = 0; p < s.n * s.c; ++p) {
              for (std::int64_t oy = 0; oy < target_h; ++oy) {
                const std::int64_t sy = nearest_source(oy, s.h, target_h);
                for (std::int64_t ox = 0; ox < target_w; ++ox) {
                  (*slots[0])[p * s.plane() + sy * s.w + nearest_source(ox, s.w, target_w)] +=
                      gy[p * target_h * target_w + oy * target_w + ox];
                }
              }
            }
          });
    }
  }
  throw Error("resample: unknown kind");
}

// ---- combination ----------------------------------------------------------

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  std::int64_t channels = 0;
  std::vector<const Var*> parents;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError(fmt::format("concat_channels: {} incompatible with {}", s.str(),
                                       first.str()));
    }
    require_same_precision(parts.front(), p, "concat_channels");
    channels += s.c;
    parents.push_back(&p);
  }
  Tensor y({first.n, channels, first.h, first.w}, parts.front().precision());
  std::vector<std::int64_t> widths;
  const std::int64_t plane = first.plane();
  std::int64_t offset = 0;
  for (const Var& p : parts) {
    const std::int64_t block = p.shape().c * plane;
    for (std::int64_t n = 0; n < first.n; ++n) {
      std::copy_n(p.value().data().data() + n * block, block,
                  y.data().data() + n * channels * plane + offset * plane);
    }
    widths.push_back(p.shape().c);
    offset += p.shape().c;
  }
  return Tape::record(OpKind::concat_channels, parents, std::move(y),
                      [widths, channels, plane, n = first.n](const Tensor& gy,
                                                             std::span<Tensor* const> slots) {
                        std::int64_t off = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                          const std::int64_t block = widths[k] * plane;
                          if (slots[k] != nullptr) {
                            for (std::int64_t b = 0; b < n; ++b) {
                              const double* src = gy.data().data() + b * channels * plane + off * plane;
                              double* dst = slots[k]->data().data() + b * block;
                              for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                            }
                          }
                          off += widths[k];
                        }
                      });
}

namespace {

enum class Broadcast { same, channel };

Broadcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1) return Broadcast::channel;
  throw DimensionError(fmt::format("{}: shapes {} and {} are not broadcast-compatible", op,
                                   a.str(), b.str()));
}

}  // namespace

Var mul(const Var& a, const Var& b) {
  require_same_precision(a, b, "elementwise_mul");
  const Shape s = a.shape();
  const Broadcast mode = broadcast_mode(s, b.shape(), "elementwise_mul");
  const std::int64_t plane = mode == Broadcast::same ? 1 : s.plane();
  Tensor y(s, a.precision());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i / plane];
  y.round_to_precision();
  auto as = a.shared();
  auto bs = b.shared();
  return Tape::record(OpKind::mul, {&a, &b}, std::move(y),
                      [as, bs, plane](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          if (slots[0]) (*slots[0])[i] += gy[i] * (*bs)[i / plane];
                          if (slots[1]) (*slots[1])[i / plane] += gy[i] * (*as)[i];
                        }
                      });
}

Var add(const Var& a, const Var& b) {
  require_same_precision(a, b, "add");
  const Shape s = a.shape();
  const Broadcast mode = broadcast_mode(s, b.shape(), "add");
  const std::int64_t plane = mode == Broadcast::same ? 1 : s.plane();
  Tensor y(s, a.precision());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i / plane];
  y.round_to_precision();
  return Tape::record(OpKind::add, {&a, &b}, std::move(y),
                      [plane](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          if (slots[0]) (*slots[0])[i] += gy[i];
                          if (slots[1]) (*slots[1])[i / plane] += gy[i];
                        }
                      });
}

Var combine(const Var& a, const Var& b, CombineKind kind) {
  switch (kind) {
    case CombineKind::concat_channels: return concat_channels({a, b});
    case CombineKind::elementwise_mul: return mul(a, b);
    case CombineKind::add: return add(a, b);
  }
  throw Error("combine: unknown kind");
}

Var sub(const Var& a, const Var& b) {
  require_same_precision(a, b, "sub");
  if (!(a.shape() == b.shape())) {
    throw DimensionError("sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor y(a.shape(), a.precision());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
  y.round_to_precision();
  return Tape::record(OpKind::sub, {&a, &b}, std::move(y),
                      [](const Tensor& gy, std::span<Tensor* const> slots) {
                        if (slots[0]) accumulate(*slots[0], gy);
                        if (slots[1]) {
                          for (std::int64_t i = 0; i < gy.numel(); ++i) (*slots[1])[i] -= gy[i];
                        }
                      });
}

Var div(const Var& a, const Var& b) {
  require_same_precision(a, b, "div");
  if (!(a.shape() == b.shape())) {
    throw DimensionError("div: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor y(a.shape(), a.precision());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] / b.value()[i];
  y.round_to_precision();
  auto as = a.shared();
  auto bs = b.shared();
  return Tape::record(OpKind::div, {&a, &b}, std::move(y),
                      [as, bs](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          const double inv = 1.0 / (*bs)[i];
                          if (slots[0]) (*slots[0])[i] += gy[i] * inv;
                          if (slots[1]) (*slots[1])[i] -= gy[i] * (*as)[i] * inv * inv;
                        }
                      });
}

// ---- elementwise scalar ops ----------------------------------------------

Var scale(const Var& a, double factor) {
  return Tape::record(OpKind::scale, {&a}, map_unary(a.value(), [factor](double v) { return v * factor; }),
                      [factor](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) (*slots[0])[i] += gy[i] * factor;
                      });
}

Var add_scalar(const Var& a, double offset) {
  return Tape::record(OpKind::add_scalar, {&a},
                      map_unary(a.value(), [offset](double v) { return v + offset; }),
                      [](const Tensor& gy, std::span<Tensor* const> slots) {
                        accumulate(*slots[0], gy);
                      });
}

Var abs(const Var& a) {
  auto as = a.shared();
  // Subgradient 0 at exact ties.
  return Tape::record(OpKind::abs, {&a}, map_unary(a.value(), [](double v) { return std::abs(v); }),
                      [as](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          const double v = (*as)[i];
                          const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                          (*slots[0])[i] += gy[i] * sign;
                        }
                      });
}

Var square(const Var& a) {
  auto as = a.shared();
  return Tape::record(OpKind::square, {&a}, map_unary(a.value(), [](double v) { return v * v; }),
                      [as](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          (*slots[0])[i] += 2.0 * gy[i] * (*as)[i];
                        }
                      });
}

Var pow_scalar(const Var& a, double exponent) {
  for (double v : a.value().data()) {
    if (v <= 0.0) throw Error("pow_scalar: base must be positive");
  }
  auto as = a.shared();
  return Tape::record(OpKind::pow_scalar, {&a},
                      map_unary(a.value(), [exponent](double v) { return std::pow(v, exponent); }),
                      [as, exponent](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          (*slots[0])[i] += gy[i] * exponent * std::pow((*as)[i], exponent - 1.0);
                        }
                      });
}

Var clamp_min(const Var& a, double floor) {
  auto as = a.shared();
  return Tape::record(OpKind::clamp_min, {&a},
                      map_unary(a.value(), [floor](double v) { return std::max(v, floor); }),
                      [as, floor](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t i = 0; i < gy.numel(); ++i) {
                          if ((*as)[i] > floor) (*slots[0])[i] += gy[i];
                        }
                      });
}

// ---- reductions -----------------------------------------------------------

Var global_avg_pool(const Var& input) {
  const Shape s = input.shape();
  if (s.h < 1 || s.w < 1) throw GeometryError("global_avg_pool: empty spatial extent");
  Tensor y({s.n, s.c, 1, 1}, input.precision());
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = input.value().data().data() + p * s.plane();
    double acc = 0.0;
    for (std::int64_t i = 0; i < s.plane(); ++i) acc += src[i];
    y[p] = acc * inv;
  }
  y.round_to_precision();
  return Tape::record(OpKind::global_avg_pool, {&input}, std::move(y),
                      [s, inv](const Tensor& gy, std::span<Tensor* const> slots) {
                        for (std::int64_t p = 0; p < s.n * s.c; ++p) {
                          double* dst = slots[0]->data().data() + p * s.plane();
                          const double g = gy[p] * inv;
                          for (std::int64_t i = 0; i < s.plane(); ++i) dst[i] += g;
                        }
                      });
}

Var gaussian_blur(const Var& input, std::span<const double> kernel) {
  const Shape s = input.shape();
  const auto k = static_cast<std::int64_t>(kernel.size());
  if (k < 1 || s.h < k || s.w < k) {
    throw GeometryError(fmt::format("gaussian_blur: window {} larger than input {}", k, s.str()));
  }
  std::vector<double> taps(kernel.begin(), kernel.end());
  const std::int64_t oh = s.h - k + 1;
  const std::int64_t ow = s.w - k + 1;
  Tensor y({s.n, s.c, oh, ow}, input.precision());
  std::vector<double> tmp(static_cast<std::size_t>(s.h * ow));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = input.value().data().data() + p * s.plane();
    for (std::int64_t yy = 0; yy < s.h; ++yy) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < k; ++j) acc += taps[j] * src[yy * s.w + xx + j];
        tmp[yy * ow + xx] = acc;
      }
    }
    double* dst = y.data().data() + p * oh * ow;
    for (std::int64_t yy = 0; yy < oh; ++yy) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < k; ++i) acc += taps[i] * tmp[(yy + i) * ow + xx];
        dst[yy * ow + xx] = acc;
      }
    }
  }
  y.round_to_precision();
  return Tape::record(
      OpKind::gaussian_blur, {&input}, std::move(y),
      [s, taps, k, oh, ow](const Tensor& gy, std::span<Tensor* const> slots) {
        std::vector<double> gtmp(static_cast<std::size_t>(s.h * ow));
        for (std::int64_t p = 0; p < s.n * s.c; ++p) {
          std::fill(gtmp.begin(), gtmp.end(), 0.0);
          const double* g = gy.data().data() + p * oh * ow;
          for (std::int64_t yy = 0; yy < oh; ++yy) {
            for (std::int64_t i = 0; i < k; ++i) {
              for (std::int64_t xx = 0; xx < ow; ++xx) gtmp[(yy + i) * ow + xx] += taps[i] * g[yy * ow + xx];
            }
          }
          double* dst = slots[0]->data().data() + p * s.plane();
          for (std::int64_t yy = 0; yy < s.h; ++yy) {
            for (std::int64_t xx = 0; xx < ow; ++xx) {
              const double gv = gtmp[yy * ow + xx];
              for (std::int64_t j = 0; j < k; ++j) dst[yy * s.w + xx + j] += taps[j] * gv;
            }
          }
        }
      });
}

Var sum_all(const Var& input) {
  double acc = 0.0;
  for (double v : input.value().data()) acc += v;
  return Tape::record(OpKind::sum_all, {&input}, Tensor::scalar(acc, input.precision()),
                      [](const Tensor& gy, std::span<Tensor* const> slots) {
                        const double g = gy[0];
                        for (double& d : slots[0]->data()) d += g;
                      });
}

Var mean_all(const Var& input) {
  const auto count = static_cast<double>(input.value().numel());
  if (count == 0.0) throw GeometryError("mean_all: empty tensor");
  double acc = 0.0;
  for (double v : input.value().data()) acc += v;
  return Tape::record(OpKind::mean_all, {&input}, Tensor::scalar(acc / count, input.precision()),
                      [count](const Tensor& gy, std::span<Tensor* const> slots) {
                        const double g = gy[0] / count;
                        for (double& d : slots[0]->data()) d += g;
                      });
}

}  // namespace stsc
