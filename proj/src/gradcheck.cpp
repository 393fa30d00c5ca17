#include "stsc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "stsc/loss.hpp"
#include "stsc/model.hpp"

namespace stsc {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(components.begin(), components.end(),
                     [](const ComponentResult& r) { return r.passed; });
}

const ComponentResult* GradcheckReport::worst_offender() const {
  const ComponentResult* worst = nullptr;
  for (bool primitive : {true, false}) {
    for (const ComponentResult& r : components) {
      if (r.passed || r.primitive != primitive) continue;
      if (worst == nullptr || r.max_rel_error > worst->max_rel_error) worst = &r;
    }
    if (worst != nullptr) return worst;
  }
  return nullptr;
}

namespace {

double evaluate(const GradComponent& c, const ParamStore& values) {
  ParamBinder binder(values, nullptr);
  return c.fn(binder).value().item();
}

}  // namespace

ComponentResult check_component(const GradComponent& c, const GradcheckOptions& opts) {
  ComponentResult r;
  r.name = c.name;
  r.primitive = c.primitive;

  ParamStore values = c.leaves;
  values.set_precision(opts.precision);

  Tape tape;
  GradMap grads;
  {
    ParamBinder binder(values, &tape);
    const Var loss = c.fn(binder);
    grads = tape.backward(loss);
  }

  std::vector<std::pair<std::size_t, std::int64_t>> coords;
  for (std::size_t e = 0; e < values.entries().size(); ++e) {
    const auto& entry = values.entries()[e];
    if (values.is_frozen(entry.name)) continue;
    for (std::int64_t i = 0; i < entry.value.numel(); ++i) coords.emplace_back(e, i);
  }
  Rng rng(opts.seed ^ std::hash<std::string>{}(c.name));
  std::shuffle(coords.begin(), coords.end(), rng);

  const double f0 = evaluate(c, values);
  for (const auto& [e, i] : coords) {
    if (r.checked >= opts.coords) break;
    const std::string& name = values.entries()[e].name;
    Tensor& t = values.at(name);
    const double x0 = t[i];
    t[i] = round_to(t.precision(), x0 + opts.eps);
    const double h_up = t[i] - x0;
    const double up = evaluate(c, values);
    t[i] = round_to(t.precision(), x0 - opts.eps);
    const double h_down = x0 - t[i];
    const double down = evaluate(c, values);
    t[i] = x0;

    const double numeric = (up - down) / (h_up + h_down);
    const double analytic = grads.contains(name) ? grads.at(name)[i] : 0.0;
    const double err = relative_error(analytic, numeric, opts.rel_floor);
    if (err > opts.tol) {
      const double forward = (up - f0) / h_up;
      const double backward = (f0 - down) / h_down;
      if (relative_error(forward, backward, opts.rel_floor) > opts.tol) {
        ++r.skipped;
        continue;
      }
    }
    ++r.checked;
    if (err >= r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_coordinate =
          fmt::format("{}[{}] analytic={:.10g} numeric={:.10g}", name, i, analytic, numeric);
    }
  }
  const int wanted = std::min<int>(opts.coords, static_cast<int>(coords.size()));
  r.passed = r.checked >= wanted && r.skipped <= r.checked && r.max_rel_error <= opts.tol &&
             std::isfinite(r.max_rel_error);
  return r;
}

// ---- component catalogue ----------------------------------------------------------

namespace {

Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// sum(out * R) with a fixed random R, so every output element matters.
std::function<Var(const Var&)> weighted_sum(Shape s, Rng& rng) {
  Tensor weights = uniform(s, rng, -1.0, 1.0);
  return [weights](const Var& out) {
    if (!(out.shape() == weights.shape())) {
      throw DimensionError("gradcheck: output " + out.shape().str() + " vs weights " +
                           weights.shape().str());
    }
    return sum_all(mul(out, Var(weights.to(out.precision()))));
  };
}

GradComponent unary(const std::string& name, Shape in, Shape out, Rng& rng, double lo, double hi,
                    std::function<Var(const Var&)> op) {
  GradComponent c;
  c.name = name;
  c.leaves.add("x", uniform(in, rng, lo, hi));
  auto reduce = weighted_sum(out, rng);
  c.fn = [op = std::move(op), reduce](ParamBinder& b) { return reduce(op(b.get("x"))); };
  return c;
}

GradComponent binary(const std::string& name, Shape sa, Shape sb, Shape out, Rng& rng,
                     double lo_b, double hi_b, std::function<Var(const Var&, const Var&)> op) {
  GradComponent c;
  c.name = name;
  c.leaves.add("a", uniform(sa, rng, -1.0, 1.0));
  c.leaves.add("b", uniform(sb, rng, lo_b, hi_b));
  auto reduce = weighted_sum(out, rng);
  c.fn = [op = std::move(op), reduce](ParamBinder& b) { return reduce(op(b.get("a"), b.get("b"))); };
  return c;
}

ParamStore random_layers(const std::vector<ConvSpec>& specs, const std::string& prefix, Rng& rng) {
  ParamStore store;
  for (const ConvSpec& spec : specs) {
    if (spec.name.rfind(prefix, 0) != 0) continue;
    ConvLayer layer = init_conv(spec, rng);
    layer.bias = uniform(layer.bias.shape(), rng, -0.1, 0.1);
    store.add(spec.weight_name(), std::move(layer.weight));
    store.add(spec.bias_name(), std::move(layer.bias));
  }
  return store;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.sem_channels = 8;
  return cfg;
}

}  // namespace

std::vector<GradComponent> gradcheck_components(const GradcheckOptions& opts) {
  Rng rng(opts.seed);
  std::vector<GradComponent> out;

  struct Geo {
    int k, stride, pad;
    std::int64_t ci, co, h, w;
  };
  const Geo geos[] = {
      {1, 1, 0, 4, 5, 6, 6}, {3, 1, 1, 3, 4, 6, 6}, {3, 2, 1, 3, 4, 7, 6}, {3, 1, 0, 3, 4, 6, 7},
      {3, 2, 0, 2, 3, 7, 7}, {5, 1, 2, 2, 3, 6, 6}, {5, 2, 2, 2, 3, 7, 8}, {7, 1, 3, 2, 2, 7, 7},
      {7, 2, 3, 2, 2, 8, 8}, {1, 2, 0, 3, 4, 6, 6},
  };
  for (const Geo& g : geos) {
    GradComponent c;
    c.name = fmt::format("conv2d[k{},s{},p{},ci{},co{},{}x{}]", g.k, g.stride, g.pad, g.ci, g.co,
                         g.h, g.w);
    c.leaves.add("x", uniform({2, g.ci, g.h, g.w}, rng, -1.0, 1.0));
    c.leaves.add("weight", uniform({g.co, g.ci, g.k, g.k}, rng, -0.5, 0.5));
    c.leaves.add("bias", uniform({g.co, 1, 1, 1}, rng, -0.5, 0.5));
    const std::int64_t oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    const std::int64_t ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
    auto reduce = weighted_sum({2, g.co, oh, ow}, rng);
    c.fn = [g, reduce](ParamBinder& b) {
      return reduce(conv2d(b.get("x"), b.get("weight"), b.get("bias"), g.stride, g.pad));
    };
    out.push_back(std::move(c));
  }

  const Shape s{2, 4, 6, 8};
  out.push_back(unary("relu", s, s, rng, -1, 1, [](const Var& x) { return relu(x); }));
  out.push_back(unary("sigmoid", s, s, rng, -3, 3, [](const Var& x) { return sigmoid(x); }));
  auto rs = [](ResampleKind k, std::int64_t th = 0, std::int64_t tw = 0) {
    return [=](const Var& x) { return resample(x, k, th, tw); };
  };
  out.push_back(unary("avg_pool_k2", s, {2, 4, 3, 4}, rng, -1, 1, rs(ResampleKind::avg_pool_k2)));
  out.push_back(unary("max_pool_k2", s, {2, 4, 3, 4}, rng, -1, 1, rs(ResampleKind::max_pool_k2)));
  out.push_back(unary("nearest_up_x2", s, {2, 4, 12, 16}, rng, -1, 1, rs(ResampleKind::nearest_up_x2)));
  out.push_back(unary("space_to_depth_x2", s, {2, 16, 3, 4}, rng, -1, 1,
                      rs(ResampleKind::space_to_depth_x2)));
  out.push_back(unary("depth_to_space_x2", s, {2, 1, 12, 16}, rng, -1, 1,
                      rs(ResampleKind::depth_to_space_x2)));
  out.push_back(unary("avg_pool_to", {2, 4, 8, 8}, {2, 4, 2, 4}, rng, -1, 1,
                      rs(ResampleKind::avg_pool_to, 2, 4)));
  out.push_back(unary("nearest_to", {2, 4, 4, 4}, {2, 4, 12, 8}, rng, -1, 1,
                      rs(ResampleKind::nearest_to, 12, 8)));
  out.push_back(unary("adaptive_avg_pool", {2, 4, 7, 5}, {2, 4, 4, 2}, rng, -1, 1,
                      rs(ResampleKind::adaptive_avg_pool, 4, 2)));
  out.push_back(unary("nearest_resize", {2, 4, 5, 7}, {2, 4, 4, 9}, rng, -1, 1,
                      rs(ResampleKind::nearest_resize, 4, 9)));
  out.push_back(unary("global_avg_pool", s, {2, 4, 1, 1}, rng, -1, 1,
                      [](const Var& x) { return global_avg_pool(x); }));
  out.push_back(binary("concat_channels", s, {2, 3, 6, 8}, {2, 7, 6, 8}, rng, -1, 1,
                       [](const Var& a, const Var& b) { return concat_channels({a, b}); }));
  out.push_back(binary("mul", s, s, s, rng, -1, 1, [](const Var& a, const Var& b) { return mul(a, b); }));
  out.push_back(binary("mul_broadcast", s, {2, 4, 1, 1}, s, rng, -1, 1,
                       [](const Var& a, const Var& b) { return mul(a, b); }));
  out.push_back(binary("add_broadcast", s, {2, 4, 1, 1}, s, rng, -1, 1,
                       [](const Var& a, const Var& b) { return add(a, b); }));
  out.push_back(binary("sub", s, s, s, rng, -1, 1, [](const Var& a, const Var& b) { return sub(a, b); }));
  out.push_back(binary("div", s, s, s, rng, 0.5, 1.5, [](const Var& a, const Var& b) { return div(a, b); }));
  out.push_back(unary("abs", s, s, rng, -1, 1, [](const Var& x) { return abs(x); }));
  out.push_back(unary("square", s, s, rng, -1, 1, [](const Var& x) { return square(x); }));
  out.push_back(unary("pow_scalar", s, s, rng, 0.2, 1.5, [](const Var& x) { return pow_scalar(x, 0.37); }));
  out.push_back(unary("clamp_min", s, s, rng, -1, 1, [](const Var& x) { return clamp_min(x, 0.1); }));
  const std::vector<double> taps = gaussian_window(5, 1.5);
  out.push_back(unary("gaussian_blur", {2, 3, 9, 10}, {2, 3, 5, 6}, rng, -1, 1,
                      [taps](const Var& x) { return gaussian_blur(x, taps); }));
  out.push_back(unary("mean_all", s, {1, 1, 1, 1}, rng, -1, 1, [](const Var& x) { return mean_all(x); }));

  // MS-SSIM over three scales.
  {
    GradComponent c;
    c.name = "ms_ssim";
    c.leaves.add("y", uniform({1, 3, 48, 48}, rng, 0.1, 0.9));
    Tensor gt = uniform({1, 3, 48, 48}, rng, 0.1, 0.9);
    for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = 0.5 * gt[i] + 0.5 * c.leaves.at("y")[i];
    c.leaves.add("gt", gt, true);
    c.fn = [](ParamBinder& b) { return ms_ssim(b.get("y"), b.get("gt")); };
    out.push_back(std::move(c));
  }

  const ModelConfig cfg = tiny_config();
  const std::vector<ConvSpec> layers = build_layers(cfg);

  for (int scale : {1, 3}) {
    GradComponent c;
    c.name = fmt::format("ctl[scale{}]", scale);
    c.primitive = false;
    c.leaves = random_layers(layers, fmt::format("fdnet.scale{}.", scale), rng);
    c.leaves.add("F_ste", uniform({1, cfg.sem_channels, 4, 4}, rng, -1, 1));
    const std::int64_t th = 8 >> (scale - 1);
    auto reduce = weighted_sum({1, cfg.channels_at(scale), th, th}, rng);
    c.fn = [cfg, scale, th, reduce](ParamBinder& b) {
      return reduce(ctl(b.get("F_ste"), scale, th, th, cfg.channels_at(scale), cfg, b).modulated);
    };
    out.push_back(std::move(c));
  }
  {
    GradComponent c;
    c.name = "cfrm";
    c.primitive = false;
    c.leaves = random_layers(layers, "sfa.cfrm.", rng);
    c.leaves.add("F", uniform({1, cfg.sem_channels, 6, 6}, rng, -1, 1));
    auto reduce = weighted_sum({1, cfg.sem_channels, 6, 6}, rng);
    c.fn = [cfg, reduce](ParamBinder& b) { return reduce(cfrm(b.get("F"), cfg, b, "sfa.cfrm")); };
    out.push_back(std::move(c));
  }
  {
    GradComponent c;
    c.name = "pcb";
    c.primitive = false;
    c.leaves = random_layers(layers, "pcb.", rng);
    const std::int64_t ch = cfg.channels_at(5);
    c.leaves.add("bottom", uniform({1, ch, 4, 4}, rng, -1, 1));
    auto reduce = weighted_sum({1, ch, 4, 4}, rng);
    c.fn = [cfg, reduce](ParamBinder& b) { return reduce(pcb(b.get("bottom"), cfg, b)); };
    out.push_back(std::move(c));
  }
  {
    GradComponent c;
    c.name = "full_network+loss";
    c.primitive = false;
    const ParamStore vgg = make_standin_vgg(opts.seed + 1);
    Rng init(opts.seed + 2);
    auto model = std::make_shared<Model>(cfg, init, &vgg, Precision::f64);
    for (const auto& e : model->params().entries()) {
      if (model->params().is_frozen(e.name)) continue;
      if (e.name.size() > 5 && e.name.compare(e.name.size() - 5, 5, ".bias") == 0) {
        model->params().at(e.name) = uniform(e.value.shape(), rng, -0.05, 0.05);
      }
    }
    c.leaves = model->params();
    const Tensor x = uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    Tensor gt = uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    c.leaves.add("input", x);
    auto features = std::make_shared<std::vector<Tensor>>(model->vgg_features(x));
    const double lambda = cfg.lambda;
    c.fn = [model, features, gt, lambda](ParamBinder& b) {
      const Var x = b.get("input");
      std::vector<Tensor> f;
      for (const Tensor& level : *features) f.push_back(level.to(x.precision()));
      const ForwardTrace t = model->forward(x, b, &f);
      return combined_loss(t.output, Var(gt.to(t.output.precision())), lambda).total;
    };
    out.push_back(std::move(c));
  }
  return out;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts,
                              const std::function<void(const ComponentResult&)>& on_result) {
  GradcheckReport report;
  for (const GradComponent& c : gradcheck_components(opts)) {
    report.components.push_back(check_component(c, opts));
    if (on_result) on_result(report.components.back());
  }
  return report;
}

}  // namespace stsc
