#include "stsc/model.hpp"

#include <fmt/core.h>

namespace stsc {

const char* to_string(EmbedSite v) { return v == EmbedSite::decoder ? "decoder" : "encoder"; }

const char* to_string(BranchMode v) {
  switch (v) {
    case BranchMode::both: return "both";
    case BranchMode::texture_only: return "texture_only";
    case BranchMode::structure_only: return "structure_only";
    case BranchMode::raw_F: return "raw_F";
    case BranchMode::none: return "none";
  }
  return "unknown";
}

const char* to_string(Ablation v) {
  switch (v) {
    case Ablation::m0: return "m0";
    case Ablation::m1: return "m1";
    case Ablation::m2: return "m2";
    case Ablation::m3: return "m3";
    case Ablation::m4: return "m4";
    case Ablation::full: return "full";
    case Ablation::no_cfrm: return "no_cfrm";
  }
  return "unknown";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::m0, Ablation::m1, Ablation::m2, Ablation::m3, Ablation::m4,
                     Ablation::full, Ablation::no_cfrm}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation '" + s + "' (expected m0..m4, full, no_cfrm)");
}

EmbedSite parse_embed_site(const std::string& s) {
  if (s == "decoder") return EmbedSite::decoder;
  if (s == "encoder") return EmbedSite::encoder;
  throw ConfigError("unknown embed site '" + s + "' (expected encoder or decoder)");
}

bool ModelConfig::uses_branches() const {
  return branch_mode == BranchMode::both || branch_mode == BranchMode::texture_only ||
         branch_mode == BranchMode::structure_only;
}

bool ModelConfig::uses_texture() const {
  return branch_mode == BranchMode::both || branch_mode == BranchMode::texture_only;
}

bool ModelConfig::uses_structure() const {
  return branch_mode == BranchMode::both || branch_mode == BranchMode::structure_only;
}

std::int64_t ModelConfig::channels_at(int scale) const {
  return base_channels << (scale - 1);
}

std::int64_t ModelConfig::embed_channels(int scale) const {
  switch (branch_mode) {
    case BranchMode::none: return 0;
    case BranchMode::raw_F: return kVggWidths[scale - 1];
    default: return fdnet_enabled ? channels_at(scale) : sem_channels;
  }
}

void ModelConfig::validate() const {
  if (scale_factor != 4) {
    throw ConfigError(fmt::format("scale factor w must be 4 (got {})", scale_factor));
  }
  if (cfrm_kernels.empty()) throw ConfigError("CFRM kernel list is empty");
  for (std::size_t i = 0; i < cfrm_kernels.size(); ++i) {
    if (cfrm_kernels[i] < 1 || cfrm_kernels[i] % 2 == 0) {
      throw ConfigError(fmt::format("CFRM kernel {} must be a positive odd integer", cfrm_kernels[i]));
    }
    if (i > 0 && cfrm_kernels[i] <= cfrm_kernels[i - 1]) {
      throw ConfigError("CFRM kernels must be strictly increasing");
    }
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError(fmt::format("lambda must lie in [0,1] (got {})", lambda));
  }
  if (base_channels < 1 || sem_channels < 1 || ctl_reduction < 1) {
    throw ConfigError("channel widths and CTL reduction ratio must be positive");
  }
  if (channels_at(5) < 4) {
    throw ConfigError("bottom width 16*c0 must be at least 4 for the context block");
  }
  if (uses_fdnet() && channels_at(1) < ctl_reduction) {
    throw ConfigError(fmt::format("CTL target channels {} smaller than reduction ratio {}",
                                  channels_at(1), ctl_reduction));
  }
}

ModelConfig ModelConfig::for_ablation(Ablation a, ModelConfig base) {
  base.branch_mode = BranchMode::both;
  base.fdnet_enabled = true;
  base.cfrm_enabled = true;
  switch (a) {
    case Ablation::m0: base.branch_mode = BranchMode::none; base.fdnet_enabled = false; break;
    case Ablation::m1: base.branch_mode = BranchMode::raw_F; base.fdnet_enabled = false; break;
    case Ablation::m2: base.branch_mode = BranchMode::structure_only; break;
    case Ablation::m3: base.branch_mode = BranchMode::texture_only; break;
    case Ablation::m4: base.fdnet_enabled = false; break;
    case Ablation::no_cfrm: base.cfrm_enabled = false; break;
    case Ablation::full: break;
  }
  return base;
}

// ---- layer tables -----------------------------------------------------------

std::vector<ConvSpec> vgg16_layers() {
  struct Row {
    const char* name;
    std::int64_t ci, co;
  };
  static const Row rows[] = {
      {"conv1_1", 3, 64},    {"conv1_2", 64, 64},   {"conv2_1", 64, 128},  {"conv2_2", 128, 128},
      {"conv3_1", 128, 256}, {"conv3_2", 256, 256}, {"conv3_3", 256, 256}, {"conv4_1", 256, 512},
      {"conv4_2", 512, 512}, {"conv4_3", 512, 512}, {"conv5_1", 512, 512}, {"conv5_2", 512, 512},
      {"conv5_3", 512, 512},
  };
  std::vector<ConvSpec> out;
  for (const Row& r : rows) {
    out.push_back(make_conv(std::string("vgg.") + r.name, r.ci, r.co, 3, 1, Activation::relu));
  }
  return out;
}

ParamStore make_standin_vgg(std::uint64_t seed, Precision precision) {
  Rng rng(seed);
  ParamStore store;
  for (const ConvSpec& spec : vgg16_layers()) {
    ConvLayer layer = init_conv(spec, rng, precision);
    store.add(spec.weight_name(), std::move(layer.weight));
    store.add(spec.bias_name(), std::move(layer.bias));
  }
  store.add("vgg.norm.mean", Tensor({3, 1, 1, 1}, {0.485, 0.456, 0.406}, precision));
  store.add("vgg.norm.std", Tensor({3, 1, 1, 1}, {0.229, 0.224, 0.225}, precision));
  return store;
}

std::string cfrm_prefix(const ModelConfig& cfg, bool texture_branch) {
  if (cfg.cfrm_shared) return "sfa.cfrm";
  return texture_branch ? "sfa.cfrm_texture" : "sfa.cfrm_structure";
}

namespace {

void add_cfrm_layers(const ModelConfig& cfg, const std::string& prefix, std::vector<ConvSpec>& out) {
  const std::int64_t sem = cfg.sem_channels;
  for (int k : cfg.cfrm_kernels) {
    out.push_back(make_conv(fmt::format("{}.path{}", prefix, k), sem, sem, k, 1, Activation::relu));
  }
  out.push_back(make_conv(prefix + ".fuse",
                          sem * static_cast<std::int64_t>(cfg.cfrm_kernels.size()), sem, 1, 1,
                          Activation::relu));
}

}  // namespace

std::vector<ConvSpec> build_layers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ConvSpec> out;
  const bool enc_embed = cfg.embed_site == EmbedSite::encoder;
  for (int i = 1; i <= 4; ++i) {
    const std::int64_t ci = i == 1 ? 3 : cfg.channels_at(i);
    out.push_back(make_conv(fmt::format("encoder.scale{}.conv", i), ci, cfg.channels_at(i), 3, 1,
                            Activation::relu));
    const std::int64_t down_in = cfg.channels_at(i) + (enc_embed ? cfg.embed_channels(i) : 0);
    out.push_back(make_conv(fmt::format("encoder.scale{}.down", i), down_in, cfg.channels_at(i + 1),
                            3, 2, Activation::relu));
  }
  const std::int64_t c5 = cfg.channels_at(5);
  out.push_back(make_conv("encoder.bottom.conv", c5, c5, 3, 1, Activation::relu));

  for (int b : kPcbBins) {
    out.push_back(make_conv(fmt::format("pcb.bin{}.conv", b), c5, c5 / 4, 1, 1, Activation::relu));
  }
  out.push_back(make_conv("pcb.fuse.conv", c5 + 3 * (c5 / 4), c5, 1, 1, Activation::relu));

  if (cfg.uses_branches()) {
    const std::int64_t sem = cfg.sem_channels;
    if (cfg.uses_texture()) {
      out.push_back(make_conv("sfa.texture.proj", 4 * kVggWidths[0] + kVggWidths[1], sem, 1, 1,
                              Activation::relu));
    }
    if (cfg.uses_structure()) {
      out.push_back(make_conv("sfa.structure.proj", 4 * kVggWidths[2] + kVggWidths[3], sem, 1, 1,
                              Activation::relu));
    }
    if (cfg.cfrm_enabled) {
      if (cfg.cfrm_shared) {
        add_cfrm_layers(cfg, "sfa.cfrm", out);
      } else {
        if (cfg.uses_texture()) add_cfrm_layers(cfg, cfrm_prefix(cfg, true), out);
        if (cfg.uses_structure()) add_cfrm_layers(cfg, cfrm_prefix(cfg, false), out);
      }
    }
    const std::int64_t branches = (cfg.uses_texture() ? 1 : 0) + (cfg.uses_structure() ? 1 : 0);
    out.push_back(make_conv("sfa.aggregate.conv", branches * sem, sem, 1, 1, Activation::relu));
  }

  if (cfg.uses_fdnet()) {
    for (int i = 1; i <= 4; ++i) {
      const std::int64_t c = cfg.channels_at(i);
      const std::int64_t hidden = c / cfg.ctl_reduction;
      out.push_back(make_conv(fmt::format("fdnet.scale{}.transform", i), cfg.sem_channels, c, 1, 1,
                              Activation::relu));
      out.push_back(make_conv(fmt::format("fdnet.scale{}.down", i), c, hidden, 1, 1,
                              Activation::relu));
      out.push_back(make_conv(fmt::format("fdnet.scale{}.up", i), hidden, c, 1, 1,
                              Activation::sigmoid));
    }
  }

  const bool dec_embed = cfg.embed_site == EmbedSite::decoder;
  for (int i = 4; i >= 1; --i) {
    const std::int64_t up = cfg.channels_at(i + 1);
    const std::int64_t ci = up + cfg.channels_at(i) + (dec_embed ? cfg.embed_channels(i) : 0);
    out.push_back(make_conv(fmt::format("decoder.scale{}.conv", i), ci, cfg.channels_at(i), 3, 1,
                            Activation::relu));
  }
  out.push_back(make_conv("decoder.output.conv", cfg.channels_at(1), 3, 3, 1, Activation::sigmoid));
  return out;
}

// ---- building blocks --------------------------------------------------------

namespace {

/// Applies the stored conv `name`, deriving its geometry from the weight shape.
Var conv_named(ParamBinder& params, const std::string& name, const Var& x, int stride,
               Activation act) {
  const Tensor& w = params.store().at(name + ".weight");
  ConvSpec spec = make_conv(name, w.shape().c, w.shape().n, static_cast<int>(w.shape().h), stride, act);
  return apply(spec, x, params);
}

Var resize_to(const Var& x, std::int64_t th, std::int64_t tw) {
  const Shape& s = x.shape();
  if (s.h == th && s.w == tw) return x;
  if (th > s.h) return resample(x, ResampleKind::nearest_to, th, tw);
  return resample(x, ResampleKind::avg_pool_to, th, tw);
}

void require_aligned(const Shape& a, const Shape& b, const char* what) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) {
    throw GeometryError(fmt::format("{}: {} misaligned with {}", what, a.str(), b.str()));
  }
}

}  // namespace

EncoderOutput encode(const Var& x, const ModelConfig& /*cfg*/, ParamBinder& params,
                     const std::vector<std::optional<Var>>& encoder_embeds) {
  const Shape& s = x.shape();
  if (s.c != 3) throw DimensionError(fmt::format("encode: expected 3 channels, got {}", s.c));
  if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0) {
    throw GeometryError(fmt::format("encode: spatial size {}x{} must be a positive multiple of 16",
                                    s.h, s.w));
  }
  EncoderOutput out;
  Var h = x;
  for (int i = 1; i <= 4; ++i) {
    Var f = conv_named(params, fmt::format("encoder.scale{}.conv", i), h, 1, Activation::relu);
    out.skips.push_back(f);
    Var down_in = f;
    if (static_cast<std::size_t>(i) <= encoder_embeds.size() && encoder_embeds[i - 1]) {
      require_aligned(encoder_embeds[i - 1]->shape(), f.shape(), "encoder embedding");
      down_in = concat_channels({f, *encoder_embeds[i - 1]});
    }
    h = conv_named(params, fmt::format("encoder.scale{}.down", i), down_in, 2, Activation::relu);
  }
  out.bottom = conv_named(params, "encoder.bottom.conv", h, 1, Activation::relu);
  return out;
}

Var pcb(const Var& bottom, const ModelConfig& /*cfg*/, ParamBinder& params) {
  const Shape& s = bottom.shape();
  if (s.h < 1 || s.w < 1) throw GeometryError("pcb: empty spatial extent");
  std::vector<Var> parts{bottom};
  for (int b : kPcbBins) {
    Var pooled = resample(bottom, ResampleKind::adaptive_avg_pool, b, b);
    Var reduced = conv_named(params, fmt::format("pcb.bin{}.conv", b), pooled, 1, Activation::relu);
    parts.push_back(resample(reduced, ResampleKind::nearest_resize, s.h, s.w));
  }
  return conv_named(params, "pcb.fuse.conv", concat_channels(parts), 1, Activation::relu);
}

std::vector<Var> vgg_extract(const Var& x, ParamBinder& vgg_params) {
  const Shape& s = x.shape();
  if (s.c != 3) throw DimensionError(fmt::format("vgg_extract: expected 3 channels, got {}", s.c));
  if (s.h % 8 != 0 || s.w % 8 != 0) {
    throw GeometryError(fmt::format("vgg_extract: spatial size {}x{} must be a multiple of 8", s.h, s.w));
  }
  for (const char* n : {"vgg.norm.mean", "vgg.norm.std", "vgg.conv4_3.weight"}) {
    if (!vgg_params.store().contains(n)) {
      throw LoadError(std::string("VGG weights not loaded: missing ") + n);
    }
  }
  const Tensor& mean = vgg_params.store().at("vgg.norm.mean");
  const Tensor& stdv = vgg_params.store().at("vgg.norm.std");
  Tensor inv({s.n, 3, 1, 1}, x.precision());
  Tensor shift({s.n, 3, 1, 1}, x.precision());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      inv.at(n, c, 0, 0) = 1.0 / stdv[c];
      shift.at(n, c, 0, 0) = -mean[c] / stdv[c];
    }
  }
  inv.round_to_precision();
  shift.round_to_precision();
  Var h = add(mul(x, Var(std::move(inv))), Var(std::move(shift)));

  static const std::vector<std::vector<const char*>> stages = {
      {"vgg.conv1_1", "vgg.conv1_2"},
      {"vgg.conv2_1", "vgg.conv2_2"},
      {"vgg.conv3_1", "vgg.conv3_2", "vgg.conv3_3"},
      {"vgg.conv4_1", "vgg.conv4_2", "vgg.conv4_3"},
  };
  std::vector<Var> features;
  for (std::size_t st = 0; st < stages.size(); ++st) {
    if (st > 0) h = resample(h, ResampleKind::max_pool_k2);
    for (const char* name : stages[st]) h = conv_named(vgg_params, name, h, 1, Activation::relu);
    features.push_back(h);
  }
  return features;
}

Var reorganize_texture(const Var& f1, const Var& f2, ParamBinder& params) {
  Var packed = resample(f1, ResampleKind::space_to_depth_x2);
  require_aligned(packed.shape(), f2.shape(), "reorganize_texture");
  return conv_named(params, "sfa.texture.proj", concat_channels({packed, f2}), 1, Activation::relu);
}

Var reorganize_structure(const Var& f3, const Var& f4, ParamBinder& params) {
  Var packed = resample(f3, ResampleKind::space_to_depth_x2);
  require_aligned(packed.shape(), f4.shape(), "reorganize_structure");
  return conv_named(params, "sfa.structure.proj", concat_channels({packed, f4}), 1,
                    Activation::relu);
}

Var cfrm(const Var& features, const ModelConfig& cfg, ParamBinder& params,
         const std::string& prefix) {
  if (features.shape().c != cfg.sem_channels) {
    throw DimensionError(fmt::format("cfrm: expected {} channels, got {}", cfg.sem_channels,
                                     features.shape().c));
  }
  std::vector<Var> paths;
  for (int k : cfg.cfrm_kernels) {
    paths.push_back(conv_named(params, fmt::format("{}.path{}", prefix, k), features, 1,
                               Activation::relu));
  }
  return conv_named(params, prefix + ".fuse", concat_channels(paths), 1, Activation::relu);
}

Var aggregate(const std::optional<Var>& texture, const std::optional<Var>& structure,
              ParamBinder& params) {
  if (!texture && !structure) throw ConfigError("aggregate: both branches are absent");
  std::vector<Var> parts;
  if (texture) parts.push_back(*texture);
  if (structure) {
    const Shape& s = structure->shape();
    const std::int64_t th = texture ? texture->shape().h : s.h * 4;
    const std::int64_t tw = texture ? texture->shape().w : s.w * 4;
    parts.push_back(resample(*structure, ResampleKind::nearest_to, th, tw));
  }
  return conv_named(params, "sfa.aggregate.conv", concat_channels(parts), 1, Activation::relu);
}

CtlOutput ctl(const Var& aggregated, int scale, std::int64_t target_h, std::int64_t target_w,
              std::int64_t target_channels, const ModelConfig& cfg, ParamBinder& params) {
  if (target_channels < cfg.ctl_reduction) {
    throw ConfigError(fmt::format("ctl: target channels {} smaller than reduction ratio {}",
                                  target_channels, cfg.ctl_reduction));
  }
  const std::string base = fmt::format("fdnet.scale{}", scale);
  const Tensor& tw = params.store().at(base + ".transform.weight");
  if (tw.shape().n != target_channels) {
    throw DimensionError(fmt::format("ctl: {} produces {} channels, requested {}", base,
                                     tw.shape().n, target_channels));
  }
  CtlOutput out;
  Var resized = resize_to(aggregated, target_h, target_w);
  out.transformed = conv_named(params, base + ".transform", resized, 1, Activation::relu);
  Var squeezed = global_avg_pool(out.transformed);
  Var hidden = conv_named(params, base + ".down", squeezed, 1, Activation::relu);
  out.gate = conv_named(params, base + ".up", hidden, 1, Activation::sigmoid);
  out.modulated = mul(out.transformed, out.gate);
  return out;
}

Var decode(const Var& context, const std::vector<Var>& skips,
           const std::vector<std::optional<Var>>& embeds, const ModelConfig& /*cfg*/,
           ParamBinder& params, std::vector<Var>* decoded) {
  if (skips.size() != 4) throw GeometryError("decode: expected 4 skip features");
  if (decoded != nullptr) decoded->assign(4, Var());
  Var g = context;
  for (int i = 4; i >= 1; --i) {
    Var up = resample(g, ResampleKind::nearest_up_x2);
    const Var& skip = skips[static_cast<std::size_t>(i - 1)];
    require_aligned(up.shape(), skip.shape(), "decoder skip");
    std::vector<Var> parts{up, skip};
    if (static_cast<std::size_t>(i) <= embeds.size() && embeds[i - 1]) {
      require_aligned(embeds[i - 1]->shape(), skip.shape(), "decoder embedding");
      parts.push_back(*embeds[i - 1]);
    }
    g = conv_named(params, fmt::format("decoder.scale{}.conv", i), concat_channels(parts), 1,
                   Activation::relu);
    if (decoded != nullptr) (*decoded)[static_cast<std::size_t>(i - 1)] = g;
  }
  return conv_named(params, "decoder.output.conv", g, 1, Activation::sigmoid);
}

// ---- model ------------------------------------------------------------------

Model::Model(ModelConfig cfg, Rng& rng, const ParamStore* vgg, Precision precision)
    : cfg_(std::move(cfg)), precision_(precision) {
  for (const ConvSpec& spec : build_layers(cfg_)) {
    ConvLayer layer = init_conv(spec, rng, precision);
    params_.add(spec.weight_name(), std::move(layer.weight));
    params_.add(spec.bias_name(), std::move(layer.bias));
  }
  if (cfg_.uses_vgg()) {
    if (vgg == nullptr) throw LoadError("configuration uses VGG features but no VGG weights given");
    for (const ConvSpec& spec : vgg16_layers()) {
      if (spec.name == "vgg.conv5_1") break;
      for (const std::string& n : {spec.weight_name(), spec.bias_name()}) {
        if (!vgg->contains(n)) throw LoadError("VGG weights missing entry " + n);
      }
      const Shape expect{spec.out_channels, spec.in_channels, 3, 3};
      if (!(vgg->at(spec.weight_name()).shape() == expect)) {
        throw LoadError(fmt::format("VGG entry {} has shape {}, expected {}", spec.weight_name(),
                                    vgg->at(spec.weight_name()).shape().str(), expect.str()));
      }
    }
    for (const char* n : {"vgg.norm.mean", "vgg.norm.std"}) {
      if (!vgg->contains(n)) throw LoadError(std::string("VGG weights missing entry ") + n);
    }
    for (const auto& e : vgg->entries()) {
      if (e.name.rfind("vgg.", 0) != 0 || e.name.rfind("vgg.conv5_", 0) == 0) continue;
      params_.add(e.name, e.value.to(precision), true);
    }
  }
}

void Model::set_precision(Precision p) {
  precision_ = p;
  params_.set_precision(p);
}

void Model::load_params(const ParamStore& store) { stsc::load_params(params_, store); }

std::vector<Tensor> Model::vgg_features(const Tensor& x) const {
  ParamBinder binder(params_, nullptr);
  std::vector<Tensor> out;
  for (const Var& v : vgg_extract(Var(x.to(precision_)), binder)) out.push_back(v.value());
  return out;
}

ForwardTrace Model::forward(const Tensor& x, Tape* tape,
                            const std::vector<Tensor>* vgg_features) const {
  ParamBinder binder(params_, tape);
  return forward(Var(x.to(precision_)), binder, vgg_features);
}

ForwardTrace Model::forward(const Var& x, ParamBinder& binder,
                            const std::vector<Tensor>* vgg_features) const {
  const Shape& s = x.shape();
  if (s.n < 1 || s.c != 3) {
    throw DimensionError("forward: expected a [n,3,H,W] image batch, got " + s.str());
  }
  if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0) {
    throw GeometryError(fmt::format("forward: spatial size {}x{} must be a positive multiple of 16",
                                    s.h, s.w));
  }
  ForwardTrace t;
  t.embeds.assign(4, std::nullopt);

  if (cfg_.uses_vgg()) {
    if (vgg_features != nullptr && !cfg_.vgg_input_grad) {
      for (const Tensor& f : *vgg_features) t.vgg.emplace_back(f);
    } else {
      t.vgg = vgg_extract(cfg_.vgg_input_grad ? x : Var(x.value()), binder);
    }
  }

  if (cfg_.branch_mode == BranchMode::raw_F) {
    for (int i = 0; i < 4; ++i) t.embeds[i] = t.vgg[i];
  } else if (cfg_.uses_branches()) {
    BranchFeatures& b = t.branches;
    if (cfg_.uses_texture()) {
      b.texture = reorganize_texture(t.vgg[0], t.vgg[1], binder);
      b.texture_refined =
          cfg_.cfrm_enabled ? cfrm(*b.texture, cfg_, binder, cfrm_prefix(cfg_, true)) : *b.texture;
    }
    if (cfg_.uses_structure()) {
      b.structure = reorganize_structure(t.vgg[2], t.vgg[3], binder);
      b.structure_refined = cfg_.cfrm_enabled
                                ? cfrm(*b.structure, cfg_, binder, cfrm_prefix(cfg_, false))
                                : *b.structure;
    }
    b.aggregated = aggregate(b.texture_refined, b.structure_refined, binder);
    for (int i = 1; i <= 4; ++i) {
      const std::int64_t th = s.h >> (i - 1);
      const std::int64_t tw = s.w >> (i - 1);
      if (cfg_.fdnet_enabled) {
        t.ctl.push_back(ctl(b.aggregated, i, th, tw, cfg_.channels_at(i), cfg_, binder));
        t.embeds[i - 1] = t.ctl.back().modulated;
      } else {
        t.embeds[i - 1] = resize_to(b.aggregated, th, tw);
      }
    }
  }

  const bool enc = cfg_.embed_site == EmbedSite::encoder;
  static const std::vector<std::optional<Var>> none;
  t.encoder = encode(x, cfg_, binder, enc ? t.embeds : none);
  t.context = pcb(t.encoder.bottom, cfg_, binder);
  t.output = decode(t.context, t.encoder.skips, enc ? none : t.embeds, cfg_, binder, &t.decoded);
  return t;
}

Tensor enhance(const Model& model, const Tensor& x) { return model.forward(x).output.value(); }

}  // namespace stsc
