#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stsc/autograd.hpp"
#include "stsc/nn.hpp"

namespace stsc {

enum class EmbedSite : std::uint8_t { decoder, encoder };

/// Which semantic features reach the base network.
///   both / texture_only / structure_only: branch pipeline (CFRM, aggregation)
///   raw_F: the four VGG scales embedded directly (no branches, no FDNet)
///   none:  plain base network
enum class BranchMode : std::uint8_t { both, texture_only, structure_only, raw_F, none };

/// Named ablation presets.
enum class Ablation : std::uint8_t { m0, m1, m2, m3, m4, full, no_cfrm };

const char* to_string(EmbedSite v);
const char* to_string(BranchMode v);
const char* to_string(Ablation v);
Ablation parse_ablation(const std::string& s);
EmbedSite parse_embed_site(const std::string& s);

struct ModelConfig {
  int scale_factor = 4;
  std::vector<int> cfrm_kernels{3, 5, 7};
  double lambda = 0.8;
  std::int64_t base_channels = 16;
  std::int64_t sem_channels = 64;
  std::int64_t ctl_reduction = 4;
  EmbedSite embed_site = EmbedSite::decoder;
  BranchMode branch_mode = BranchMode::both;
  bool fdnet_enabled = true;
  bool cfrm_enabled = true;
  /// One CFRM parameter set serves both branches; false gives each its own.
  bool cfrm_shared = true;
  /// Let gradients flow from the VGG extractor back to the input image.
  bool vgg_input_grad = false;

  void validate() const;
  bool uses_vgg() const { return branch_mode != BranchMode::none; }
  bool uses_branches() const;
  bool uses_texture() const;
  bool uses_structure() const;
  bool uses_fdnet() const { return uses_branches() && fdnet_enabled; }

  /// Encoder/decoder width at scale i (1-based): c0 * 2^(i-1); scale 5 is the bottom.
  std::int64_t channels_at(int scale) const;
  /// Channels of the semantic embedding delivered at scale i (0 when none).
  std::int64_t embed_channels(int scale) const;

  static ModelConfig for_ablation(Ablation a, ModelConfig base);
  static ModelConfig for_ablation(Ablation a) { return for_ablation(a, ModelConfig{}); }
};

// VGG16 feature widths at scales 1..4 (relu1_2, relu2_2, relu3_3, relu4_3).
inline constexpr std::int64_t kVggWidths[4] = {64, 128, 256, 512};
inline constexpr int kPcbBins[3] = {1, 2, 4};

/// The 13 VGG16 conv layers in canonical order ("vgg.conv1_1" ... "vgg.conv5_3").
std::vector<ConvSpec> vgg16_layers();
/// Randomly initialized stand-in carrying the exported-file layout: 13 convs
/// plus "vgg.norm.mean"/"vgg.norm.std" holding the ImageNet constants.
ParamStore make_standin_vgg(std::uint64_t seed, Precision precision = Precision::f64);

/// Trainable layers in canonical (initialization) order.
std::vector<ConvSpec> build_layers(const ModelConfig& cfg);

struct EncoderOutput {
  std::vector<Var> skips;  // f^1..f^4 at H, H/2, H/4, H/8
  Var bottom;              // H/16
};

struct BranchFeatures {
  std::optional<Var> texture;            // F_te at H/2
  std::optional<Var> structure;          // F_st at H/8
  std::optional<Var> texture_refined;    // after CFRM
  std::optional<Var> structure_refined;  // after CFRM
  Var aggregated;                        // F_ste at H/2
};

struct CtlOutput {
  Var transformed;  // f_t^i
  Var gate;         // w_t^i, [n, c, 1, 1]
  Var modulated;    // f_ste^i
};

struct ForwardTrace {
  EncoderOutput encoder;
  Var context;              // PCB output
  std::vector<Var> vgg;     // F_1..F_4
  BranchFeatures branches;  // valid only when the branch pipeline runs
  std::vector<CtlOutput> ctl;
  std::vector<std::optional<Var>> embeds;  // per scale 1..4
  std::vector<Var> decoded;                // g^1..g^4
  Var output;                              // y
};

// Building blocks. `params` resolves canonical names.
EncoderOutput encode(const Var& x, const ModelConfig& cfg, ParamBinder& params,
                     const std::vector<std::optional<Var>>& encoder_embeds = {});
Var pcb(const Var& bottom, const ModelConfig& cfg, ParamBinder& params);
std::vector<Var> vgg_extract(const Var& x, ParamBinder& vgg_params);
Var reorganize_texture(const Var& f1, const Var& f2, ParamBinder& params);
Var reorganize_structure(const Var& f3, const Var& f4, ParamBinder& params);
/// `prefix` names the CFRM parameter set (e.g. "sfa.cfrm").
Var cfrm(const Var& features, const ModelConfig& cfg, ParamBinder& params,
         const std::string& prefix);
Var aggregate(const std::optional<Var>& texture, const std::optional<Var>& structure,
              ParamBinder& params);
CtlOutput ctl(const Var& aggregated, int scale, std::int64_t target_h, std::int64_t target_w,
              std::int64_t target_channels, const ModelConfig& cfg, ParamBinder& params);
Var decode(const Var& context, const std::vector<Var>& skips,
           const std::vector<std::optional<Var>>& embeds, const ModelConfig& cfg,
           ParamBinder& params, std::vector<Var>* decoded = nullptr);

/// Name of the CFRM parameter set used by a branch.
std::string cfrm_prefix(const ModelConfig& cfg, bool texture_branch);

class Model {
 public:
  /// Fresh model; trainable layers drawn from `rng` in canonical order. `vgg`
  /// is required whenever the configuration uses semantic features.
  Model(ModelConfig cfg, Rng& rng, const ParamStore* vgg = nullptr,
        Precision precision = Precision::f64);

  const ModelConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  Precision precision() const { return precision_; }
  void set_precision(Precision p);

  std::int64_t trainable_parameter_count() const { return params_.trainable_elements(); }

  /// Full forward pass. `vgg_features` may supply precomputed F_1..F_4
  /// (valid only while no gradient flows into the extractor's input).
  ForwardTrace forward(const Tensor& x, Tape* tape = nullptr,
                       const std::vector<Tensor>* vgg_features = nullptr) const;
  ForwardTrace forward(const Var& x, ParamBinder& binder,
                       const std::vector<Tensor>* vgg_features = nullptr) const;

  /// Untracked VGG pyramid for an image batch.
  std::vector<Tensor> vgg_features(const Tensor& x) const;

  ParamStore collect_params() const { return params_; }
  void load_params(const ParamStore& store);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Precision precision_;
};

/// Convenience: y = forward(x) without recording.
Tensor enhance(const Model& model, const Tensor& x);

}  // namespace stsc
