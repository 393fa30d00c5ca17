#include <gtest/gtest.h>

#include <set>

#include "param_oracle.hpp"
#include "stsc/model.hpp"
#include "support.hpp"

using namespace stsc;
using testing_support::random_tensor;

namespace {

const ParamStore& standin_vgg() {
  static const ParamStore vgg = make_standin_vgg(11);
  return vgg;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.sem_channels = 16;
  return cfg;
}

Tensor image(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed,
             Precision p = Precision::f64) {
  std::mt19937_64 rng(seed);
  return random_tensor({n, 3, h, w}, rng, 0.0, 1.0, p);
}

/// Randomizes every trainable bias so that zero-bias shortcuts cannot hide bugs.
void randomize_biases(Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  ParamStore& ps = m.params();
  for (const auto& e : ps.entries()) {
    if (ps.is_frozen(e.name) || e.name.find(".bias") == std::string::npos) continue;
    Tensor& t = ps.at(e.name);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  }
}

}  // namespace

TEST(Encoder, ExampleShapesAt64) {
  ModelConfig cfg = ModelConfig::for_ablation(Ablation::m0);
  cfg.base_channels = 16;
  Rng rng(1);
  Model m(cfg, rng);
  ParamBinder b(m.params(), nullptr);
  const EncoderOutput e = encode(Var(image(1, 64, 64, 2)), cfg, b);
  ASSERT_EQ(e.skips.size(), 4u);
  EXPECT_EQ(e.skips[0].shape(), (Shape{1, 16, 64, 64}));
  EXPECT_EQ(e.skips[1].shape(), (Shape{1, 32, 32, 32}));
  EXPECT_EQ(e.skips[2].shape(), (Shape{1, 64, 16, 16}));
  EXPECT_EQ(e.skips[3].shape(), (Shape{1, 128, 8, 8}));
  EXPECT_EQ(e.bottom.shape(), (Shape{1, 256, 4, 4}));
}

TEST(Encoder, ZeroInputZeroBiasGivesZeroPyramid) {
  Rng rng(3);
  const ModelConfig cfg = ModelConfig::for_ablation(Ablation::m0, small_config());
  Model m(cfg, rng);
  ParamBinder b(m.params(), nullptr);
  const EncoderOutput e = encode(Var(Tensor({2, 3, 32, 32})), cfg, b);
  for (const Var& s : e.skips)
    for (double v : s.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : e.bottom.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, RejectsBadGeometry) {
  Rng rng(3);
  const ModelConfig cfg = ModelConfig::for_ablation(Ablation::m0, small_config());
  Model m(cfg, rng);
  ParamBinder b(m.params(), nullptr);
  EXPECT_THROW(encode(Var(Tensor({1, 3, 40, 32})), cfg, b), GeometryError);
  EXPECT_THROW(encode(Var(Tensor({1, 1, 32, 32})), cfg, b), DimensionError);
  EXPECT_THROW(m.forward(Tensor({1, 3, 24, 32})), GeometryError);
}

TEST(Pcb, ConstantInputGivesSpatiallyConstantOutput) {
  Rng rng(4);
  const ModelConfig cfg = ModelConfig::for_ablation(Ablation::m0, small_config());
  Model m(cfg, rng);
  randomize_biases(m, 5);
  ParamBinder b(m.params(), nullptr);
  const std::int64_t c5 = cfg.channels_at(5);
  Tensor x({1, c5, 4, 6});
  for (std::int64_t c = 0; c < c5; ++c)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t j = 0; j < 6; ++j) x.at(0, c, i, j) = 0.01 * static_cast<double>(c + 1);
  const Tensor y = pcb(Var(x), cfg, b).value();
  ASSERT_EQ(y.shape(), x.shape());
  for (std::int64_t c = 0; c < c5; ++c)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t j = 0; j < 6; ++j) EXPECT_NEAR(y.at(0, c, i, j), y.at(0, c, 0, 0), 1e-12);
}

TEST(Vgg, PyramidShapesAt64) {
  Rng rng(5);
  Model m(small_config(), rng, &standin_vgg());
  const std::vector<Tensor> f = m.vgg_features(image(1, 64, 64, 6));
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0].shape(), (Shape{1, 64, 64, 64}));
  EXPECT_EQ(f[1].shape(), (Shape{1, 128, 32, 32}));
  EXPECT_EQ(f[2].shape(), (Shape{1, 256, 16, 16}));
  EXPECT_EQ(f[3].shape(), (Shape{1, 512, 8, 8}));
  for (const Tensor& t : f)
    for (double v : t.data()) EXPECT_GE(v, 0.0);
}

TEST(Vgg, MissingWeightsRaise) {
  Rng rng(5);
  EXPECT_THROW(Model(small_config(), rng, nullptr), LoadError);
  ParamStore partial;
  for (const auto& e : standin_vgg().entries())
    if (e.name.rfind("vgg.conv4_3", 0) != 0) partial.add(e.name, e.value);
  EXPECT_THROW(Model(small_config(), rng, &partial), LoadError);
}

TEST(Branches, ConcatWidthsAndZeroFeatures) {
  Rng rng(6);
  const ModelConfig cfg = small_config();
  Model m(cfg, rng, &standin_vgg());
  EXPECT_EQ(m.params().at("sfa.texture.proj.weight").shape().c, 384);
  EXPECT_EQ(m.params().at("sfa.structure.proj.weight").shape().c, 1536);
  ParamBinder b(m.params(), nullptr);
  const Var te = reorganize_texture(Var(Tensor({1, 64, 16, 16})), Var(Tensor({1, 128, 8, 8})), b);
  const Var st = reorganize_structure(Var(Tensor({1, 256, 4, 4})), Var(Tensor({1, 512, 2, 2})), b);
  EXPECT_EQ(te.shape(), (Shape{1, cfg.sem_channels, 8, 8}));
  EXPECT_EQ(st.shape(), (Shape{1, cfg.sem_channels, 2, 2}));
  for (double v : te.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : st.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(reorganize_texture(Var(Tensor({1, 64, 16, 16})), Var(Tensor({1, 128, 4, 4})), b),
               GeometryError);
}

TEST(Cfrm, SharedBranchesAreBitIdentical) {
  Rng rng(7);
  const ModelConfig cfg = small_config();
  Model m(cfg, rng, &standin_vgg());
  randomize_biases(m, 8);
  const std::string pt = cfrm_prefix(cfg, true);
  const std::string ps = cfrm_prefix(cfg, false);
  for (int k : cfg.cfrm_kernels) {
    const std::string suffix = ".path" + std::to_string(k) + ".weight";
    ASSERT_NE(m.params().find(pt + suffix), nullptr);
    EXPECT_EQ(m.params().find(pt + suffix), m.params().find(ps + suffix));
  }
  for (const auto& e : m.params().entries()) {
    EXPECT_EQ(e.name.find("cfrm_"), std::string::npos) << e.name;
  }
  std::mt19937_64 r(9);
  const Tensor f = random_tensor({1, cfg.sem_channels, 8, 8}, r, 0.0, 1.0);
  Tape tape;
  ParamBinder b(m.params(), &tape);
  const Var a = cfrm(Var(f), cfg, b, pt);
  const Var s = cfrm(Var(f), cfg, b, ps);
  EXPECT_TRUE(bit_equal(a.value(), s.value()));
  EXPECT_EQ(b.get(pt + ".fuse.weight").node(), b.get(ps + ".fuse.weight").node());
}

TEST(Cfrm, UnsharedSetsDiffer) {
  Rng rng(7);
  ModelConfig cfg = small_config();
  cfg.cfrm_shared = false;
  Model m(cfg, rng, &standin_vgg());
  EXPECT_NE(cfrm_prefix(cfg, true), cfrm_prefix(cfg, false));
  std::mt19937_64 r(9);
  const Tensor f = random_tensor({1, cfg.sem_channels, 8, 8}, r, 0.0, 1.0);
  ParamBinder b(m.params(), nullptr);
  EXPECT_FALSE(bit_equal(cfrm(Var(f), cfg, b, cfrm_prefix(cfg, true)).value(),
                         cfrm(Var(f), cfg, b, cfrm_prefix(cfg, false)).value()));
}

TEST(Cfrm, DisabledPassesThrough) {
  Rng rng(10);
  const ModelConfig cfg = ModelConfig::for_ablation(Ablation::no_cfrm, small_config());
  Model m(cfg, rng, &standin_vgg());
  const ForwardTrace t = m.forward(image(1, 32, 32, 11));
  EXPECT_TRUE(bit_equal(t.branches.texture->value(), t.branches.texture_refined->value()));
  EXPECT_TRUE(bit_equal(t.branches.structure->value(), t.branches.structure_refined->value()));
  for (const auto& e : m.params().entries()) EXPECT_EQ(e.name.find("cfrm"), std::string::npos);
}

TEST(Aggregate, BothAbsentIsConfigError) {
  Rng rng(10);
  Model m(small_config(), rng, &standin_vgg());
  ParamBinder b(m.params(), nullptr);
  EXPECT_THROW(aggregate(std::nullopt, std::nullopt, b), ConfigError);
}

TEST(Ctl, GateBoundsAndAttenuation) {
  Rng rng(12);
  Model m(small_config(), rng, &standin_vgg());
  randomize_biases(m, 13);
  const ForwardTrace t = m.forward(image(2, 32, 32, 14));
  ASSERT_EQ(t.ctl.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    const CtlOutput& c = t.ctl[i];
    EXPECT_EQ(c.gate.shape(), (Shape{2, m.config().channels_at(i + 1), 1, 1}));
    for (double v : c.gate.value().data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const Tensor& ft = c.transformed.value();
    const Tensor& fs = c.modulated.value();
    for (std::int64_t k = 0; k < ft.numel(); ++k) EXPECT_LE(std::abs(fs[k]), std::abs(ft[k]));
  }
}

TEST(Ctl, ZeroGateGivesHalf) {
  Rng rng(15);
  Model m(small_config(), rng, &standin_vgg());
  for (int i = 1; i <= 4; ++i) {
    for (const char* part : {".weight", ".bias"}) {
      Tensor& t = m.params().at("fdnet.scale" + std::to_string(i) + ".up" + part);
      for (std::int64_t k = 0; k < t.numel(); ++k) t[k] = 0.0;
    }
  }
  const ForwardTrace t = m.forward(image(1, 32, 32, 16));
  for (const CtlOutput& c : t.ctl) {
    for (double v : c.gate.value().data()) EXPECT_EQ(v, 0.5);
    const Tensor& ft = c.transformed.value();
    const Tensor& fs = c.modulated.value();
    for (std::int64_t k = 0; k < ft.numel(); ++k) EXPECT_EQ(fs[k], 0.5 * ft[k]);
  }
}

TEST(Ctl, ReductionLargerThanChannelsIsConfigError) {
  Rng rng(15);
  ModelConfig cfg = small_config();
  Model m(cfg, rng, &standin_vgg());
  cfg.ctl_reduction = 64;
  ParamBinder b(m.params(), nullptr);
  EXPECT_THROW(ctl(Var(Tensor({1, cfg.sem_channels, 8, 8})), 1, 8, 8, 8, cfg, b), ConfigError);
}

namespace {

// Documented pyramid for the full configuration at input H x W.
void expect_pyramid(const ForwardTrace& t, const ModelConfig& cfg, std::int64_t n, std::int64_t h,
                    std::int64_t w) {
  const std::int64_t sem = cfg.sem_channels;
  auto c = [&](int i) { return cfg.channels_at(i); };
  for (int i = 1; i <= 4; ++i) {
    const std::int64_t hi = h >> (i - 1), wi = w >> (i - 1);
    EXPECT_EQ(t.vgg[i - 1].shape(), (Shape{n, kVggWidths[i - 1], hi, wi})) << "F_" << i;
    EXPECT_EQ(t.encoder.skips[i - 1].shape(), (Shape{n, c(i), hi, wi})) << "f^" << i;
    EXPECT_EQ(t.ctl[i - 1].transformed.shape(), (Shape{n, c(i), hi, wi})) << "f_t^" << i;
    EXPECT_EQ(t.ctl[i - 1].gate.shape(), (Shape{n, c(i), 1, 1})) << "w_t^" << i;
    EXPECT_EQ(t.ctl[i - 1].modulated.shape(), (Shape{n, c(i), hi, wi})) << "f_ste^" << i;
    EXPECT_EQ(t.embeds[i - 1]->shape(), (Shape{n, c(i), hi, wi})) << "embed " << i;
    EXPECT_EQ(t.decoded[i - 1].shape(), (Shape{n, c(i), hi, wi})) << "g^" << i;
  }
  EXPECT_EQ(t.encoder.bottom.shape(), (Shape{n, c(5), h / 16, w / 16}));
  EXPECT_EQ(t.context.shape(), (Shape{n, c(5), h / 16, w / 16}));
  EXPECT_EQ(t.branches.texture->shape(), (Shape{n, sem, h / 2, w / 2}));
  EXPECT_EQ(t.branches.texture_refined->shape(), (Shape{n, sem, h / 2, w / 2}));
  EXPECT_EQ(t.branches.structure->shape(), (Shape{n, sem, h / 8, w / 8}));
  EXPECT_EQ(t.branches.structure_refined->shape(), (Shape{n, sem, h / 8, w / 8}));
  EXPECT_EQ(t.branches.aggregated.shape(), (Shape{n, sem, h / 2, w / 2}));
  EXPECT_EQ(t.output.shape(), (Shape{n, 3, h, w}));
}

}  // namespace

TEST(Forward, PyramidTableAtDocumentedSizes) {
  ModelConfig cfg;  // c0 = 16, sem = 64
  Rng rng(17);
  Model m(cfg, rng, &standin_vgg(), Precision::f32);
  for (std::int64_t s : {64, 96, 224}) {
    const ForwardTrace t = m.forward(image(1, s, s, 18, Precision::f32));
    expect_pyramid(t, cfg, 1, s, s);
  }
  const ForwardTrace t = m.forward(image(2, 64, 96, 19, Precision::f32));
  expect_pyramid(t, cfg, 2, 64, 96);
}

TEST(Forward, OutputInOpenUnitIntervalAndPure) {
  Rng rng(20);
  Model m(small_config(), rng, &standin_vgg());
  randomize_biases(m, 21);
  const Tensor x = image(2, 32, 48, 22);
  const Tensor y = enhance(m, x);
  for (double v : y.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_TRUE(bit_equal(y, enhance(m, x)));
}

TEST(Forward, PrecomputedVggFeaturesMatch) {
  Rng rng(23);
  Model m(small_config(), rng, &standin_vgg());
  const Tensor x = image(1, 32, 32, 24);
  const std::vector<Tensor> f = m.vgg_features(x);
  EXPECT_TRUE(bit_equal(m.forward(x).output.value(), m.forward(x, nullptr, &f).output.value()));
}

TEST(Ablations, ParameterCountsMatchClosedFormAndAreDistinct) {
  struct Case {
    Ablation a;
    EmbedSite site;
  };
  const Case cases[] = {{Ablation::m0, EmbedSite::decoder},   {Ablation::m1, EmbedSite::decoder},
                        {Ablation::m2, EmbedSite::decoder},   {Ablation::m3, EmbedSite::decoder},
                        {Ablation::m4, EmbedSite::decoder},   {Ablation::full, EmbedSite::decoder},
                        {Ablation::no_cfrm, EmbedSite::decoder}, {Ablation::full, EmbedSite::encoder}};
  std::set<std::int64_t> seen;
  for (const Case& k : cases) {
    ModelConfig cfg = ModelConfig::for_ablation(k.a, small_config());
    cfg.embed_site = k.site;
    Rng rng(25);
    Model m(cfg, rng, &standin_vgg());
    const std::int64_t expect = testing_support::expected_param_count(cfg);
    EXPECT_EQ(m.trainable_parameter_count(), expect) << to_string(k.a) << "/" << to_string(k.site);
    seen.insert(expect);
    const ForwardTrace t = m.forward(image(1, 32, 32, 26));
    EXPECT_EQ(t.output.shape(), (Shape{1, 3, 32, 32}));
  }
  EXPECT_EQ(seen.size(), std::size(cases));
}

TEST(Ablations, DefaultWidthsMatchClosedForm) {
  for (Ablation a : {Ablation::m0, Ablation::m1, Ablation::full}) {
    const ModelConfig cfg = ModelConfig::for_ablation(a);
    std::int64_t sum = 0;
    for (const ConvSpec& s : build_layers(cfg)) sum += s.parameter_count();
    EXPECT_EQ(sum, testing_support::expected_param_count(cfg)) << to_string(a);
  }
}

TEST(Ablations, M0HasNoSemanticParams) {
  Rng rng(27);
  Model m(ModelConfig::for_ablation(Ablation::m0, small_config()), rng);
  for (const auto& e : m.params().entries()) {
    EXPECT_EQ(e.name.rfind("vgg.", 0), std::string::npos);
    EXPECT_EQ(e.name.rfind("sfa.", 0), std::string::npos);
    EXPECT_EQ(e.name.rfind("fdnet.", 0), std::string::npos);
  }
}

TEST(Params, FrozenSetIsExactlyVgg) {
  Rng rng(28);
  Model m(small_config(), rng, &standin_vgg());
  std::set<std::string> vgg_names;
  for (const auto& e : m.params().entries())
    if (e.name.rfind("vgg.", 0) == 0) vgg_names.insert(e.name);
  EXPECT_EQ(vgg_names.size(), 22u);
  EXPECT_EQ(m.params().frozen(), vgg_names);
}

TEST(Params, VggNeverReceivesGradients) {
  Rng rng(29);
  Model m(small_config(), rng, &standin_vgg());
  Tape tape;
  const ForwardTrace t = m.forward(image(1, 32, 32, 30), &tape);
  const GradMap g = tape.backward(mean_all(t.output));
  for (const auto& [name, grad] : g.entries()) EXPECT_NE(name.rfind("vgg.", 0), 0u) << name;
  for (const auto& e : m.params().entries()) {
    if (!m.params().is_frozen(e.name)) EXPECT_TRUE(g.contains(e.name)) << e.name;
  }
}

TEST(Params, CollectLoadRoundTrip) {
  Rng ra(31), rb(32);
  Model a(small_config(), ra, &standin_vgg());
  Model b(small_config(), rb, &standin_vgg());
  const Tensor x = image(1, 32, 32, 33);
  EXPECT_FALSE(bit_equal(enhance(a, x), enhance(b, x)));
  b.load_params(a.collect_params());
  EXPECT_TRUE(bit_equal(enhance(a, x), enhance(b, x)));
}

TEST(Params, RenamedKeyIsNamed) {
  Rng rng(34);
  Model m(small_config(), rng, &standin_vgg());
  ParamStore renamed;
  for (const auto& e : m.params().entries()) {
    renamed.add(e.name == "decoder.scale2.conv.bias" ? "decoder.scale2.conv.b" : e.name, e.value);
  }
  try {
    m.load_params(renamed);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.scale2.conv.bias"), std::string::npos);
  }
}

TEST(Params, CanonicalNamesAreStable) {
  const std::vector<ConvSpec> layers = build_layers(small_config());
  EXPECT_EQ(layers.front().name, "encoder.scale1.conv");
  EXPECT_EQ(layers.back().name, "decoder.output.conv");
  std::set<std::string> names;
  for (const ConvSpec& s : layers) EXPECT_TRUE(names.insert(s.name).second) << s.name;
}
