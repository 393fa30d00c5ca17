#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stsc/loss.hpp"
#include "stsc/model.hpp"
#include "stsc/nn.hpp"

namespace stsc {

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::int64_t iters = 100000;
  std::int64_t batch = 8;
  std::int64_t crop = 224;
  double lr0 = 5e-4;
  double lr_decay = 0.2;
  std::int64_t lr_period = 8000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  /// Checkpoint interval in iterations; 0 writes only the final checkpoint.
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 1;
  /// Maximum number of cached VGG pyramids (one per image window).
  std::size_t vgg_cache_limit = 512;

  void validate() const;
};

double lr_at(std::int64_t iter, const TrainConfig& cfg);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update over the non-frozen parameters in store
/// order. Moments are kept in double precision; parameters are rounded to
/// their own precision after the update.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

struct Dataset {
  std::vector<std::string> names;
  std::vector<Tensor> inputs;  // [1,3,H,W] each
  std::vector<Tensor> targets;
  std::size_t size() const { return inputs.size(); }
};

/// Reads every pair of `root`; images smaller than `min_side` or with
/// mismatched input/gt shapes are listed in a DataError.
Dataset load_dataset(const std::filesystem::path& root, std::int64_t min_side);

struct CropWindow {
  std::int64_t image = 0;
  std::int64_t top = 0;
  std::int64_t left = 0;
  auto operator<=>(const CropWindow&) const = default;
};

struct Batch {
  Tensor x;
  Tensor gt;
  std::vector<CropWindow> windows;
};

/// Per item, draws image index, then top, then left, each uniformly.
Batch sample_batch(const Dataset& data, Rng& rng, std::int64_t crop, std::int64_t batch,
                   Precision precision = Precision::f64);

/// Cuts the [1,3,crop,crop] window of one image.
Tensor crop_image(const Tensor& image, std::int64_t top, std::int64_t left, std::int64_t crop);
/// Concatenates [1,...] tensors (or equal-shaped batches) along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& items);
/// Batch item `index` as a [1,c,h,w] tensor.
Tensor batch_item(const Tensor& t, std::int64_t index);

std::vector<std::uint32_t> rng_state_words(const Rng& rng);
void restore_rng(Rng& rng, const std::vector<std::uint32_t>& words);

struct StepStats {
  std::int64_t iter = 0;  // completed steps, counting the one just taken
  double lr = 0.0;
  double loss = 0.0;
  double l1 = 0.0;
  double msssim = 0.0;
};

std::string format_log_line(const StepStats& s);

class Trainer {
 public:
  /// Fresh run: the model is initialized from the seeded generator, which
  /// then continues to drive crop sampling.
  Trainer(ModelConfig model_cfg, TrainConfig train_cfg, Dataset data, const ParamStore* vgg);

  /// Continues from a checkpoint. `iters_override` replaces the stored target.
  static Trainer resume(const ParamStore& checkpoint, Dataset data,
                        std::optional<std::int64_t> iters_override = std::nullopt);

  StepStats step();
  /// Steps until `train_config().iters`; calls `on_step` after each step and
  /// `on_checkpoint` at every checkpoint interval.
  void run(const std::function<void(const StepStats&)>& on_step = {},
           const std::function<void(const Trainer&)>& on_checkpoint = {});

  std::int64_t iteration() const { return iter_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const ModelConfig& model_config() const { return model_.config(); }
  const TrainConfig& train_config() const { return tcfg_; }
  const AdamState& adam() const { return adam_; }
  const Dataset& data() const { return data_; }

  ParamStore checkpoint() const;

 private:
  Trainer(std::pair<Model, Rng> seeded, TrainConfig train_cfg, Dataset data);

  std::vector<Tensor> batch_features(const Batch& b);

  Model model_;
  TrainConfig tcfg_;
  Dataset data_;
  Rng rng_;
  AdamState adam_;
  std::int64_t iter_ = 0;
  std::map<CropWindow, std::vector<Tensor>> vgg_cache_;
};

/// Model configuration and target iteration count recorded in a checkpoint.
ModelConfig checkpoint_model_config(const ParamStore& checkpoint);
TrainConfig checkpoint_train_config(const ParamStore& checkpoint);
/// Inference model from a checkpoint (model parameters including VGG).
Model model_from_checkpoint(const ParamStore& checkpoint);

/// Full driver: loads data and VGG weights, trains, and writes `out_path`
/// (also at every checkpoint interval). Logs one line per `log_every` steps.
void train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
           const std::filesystem::path& dataset_dir, const std::filesystem::path& vgg_path,
           const std::filesystem::path& out_path, std::ostream* log,
           const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace stsc
