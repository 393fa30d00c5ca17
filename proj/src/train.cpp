#include "stsc/train.hpp"

#include <cmath>
#include <sstream>

#include <fmt/core.h>

#include "stsc/io.hpp"

namespace stsc {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (iters < 0) throw ConfigError(fmt::format("iters must be >= 0 (got {})", iters));
  if (batch < 1) throw ConfigError(fmt::format("batch must be >= 1 (got {})", batch));
  if (crop < 16 || crop % 16 != 0) {
    throw ConfigError(fmt::format("crop must be a positive multiple of 16 (got {})", crop));
  }
  if (!(lr0 > 0.0)) throw ConfigError(fmt::format("lr must be > 0 (got {})", lr0));
  if (!(lr_decay > 0.0)) throw ConfigError("lr decay factor must be > 0");
  if (lr_period < 1) throw ConfigError("lr period must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(eps_adam > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  if (log_every < 1) throw ConfigError("log interval must be >= 1");
}

double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ConfigError("lr_at: negative iteration");
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.lr_period));
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& e : params.entries()) {
    if (params.is_frozen(e.name)) continue;
    if (!grads.contains(e.name)) throw Error("adam_step: missing gradient for " + e.name);
    if (!(grads.at(e.name).shape() == e.value.shape())) {
      throw DimensionError(fmt::format("adam_step: gradient for {} has shape {}, expected {}",
                                       e.name, grads.at(e.name).shape().str(),
                                       e.value.shape().str()));
    }
    names.push_back(e.name);
  }
  if (grads.size() != names.size()) {
    std::string extra;
    for (const auto& [name, g] : grads.entries()) {
      if (!params.contains(name) || params.is_frozen(name)) extra += " " + name;
    }
    throw Error("adam_step: gradients for unknown or frozen parameters:" + extra);
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const std::string& name : names) {
    Tensor& p = params.at(name);
    const Tensor& g = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    const Precision prec = p.precision();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = round_to(prec, p[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps_adam));
    }
  }
}

// ---- data ---------------------------------------------------------------------

Dataset load_dataset(const fs::path& root, std::int64_t min_side) {
  const DatasetLayout layout = scan_dataset(root);
  if (layout.empty()) throw DataError("dataset " + root.string() + " has no input/gt pairs");
  Dataset d;
  std::string problems;
  for (const std::string& name : layout.pairs) {
    Tensor in = read_image(root / "input" / name);
    Tensor gt = read_image(root / "gt" / name);
    if (!(in.shape() == gt.shape())) {
      problems += fmt::format("\n  {}: input {} vs gt {}", name, in.shape().str(), gt.shape().str());
      continue;
    }
    if (in.shape().h < min_side || in.shape().w < min_side) {
      problems += fmt::format("\n  {}: {}x{} smaller than crop {}", name, in.shape().h,
                              in.shape().w, min_side);
      continue;
    }
    d.names.push_back(name);
    d.inputs.push_back(std::move(in));
    d.targets.push_back(std::move(gt));
  }
  if (!problems.empty()) throw DataError("unusable dataset images:" + problems);
  return d;
}

Tensor crop_image(const Tensor& image, std::int64_t top, std::int64_t left, std::int64_t crop) {
  const Shape& s = image.shape();
  if (top < 0 || left < 0 || top + crop > s.h || left + crop > s.w) {
    throw GeometryError(fmt::format("crop window ({},{})+{} outside {}", top, left, crop, s.str()));
  }
  Tensor out({1, s.c, crop, crop}, image.precision());
  for (std::int64_t c = 0; c < s.c; ++c) {
    for (std::int64_t y = 0; y < crop; ++y) {
      for (std::int64_t x = 0; x < crop; ++x) out.at(0, c, y, x) = image.at(0, c, top + y, left + x);
    }
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw DimensionError("stack_batch: no items");
  const Shape& s0 = items.front().shape();
  std::int64_t n = 0;
  for (const Tensor& t : items) {
    const Shape& s = t.shape();
    if (s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw DimensionError("stack_batch: " + s.str() + " vs " + s0.str());
    }
    n += s.n;
  }
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * s0.c * s0.h * s0.w));
  for (const Tensor& t : items) values.insert(values.end(), t.values().begin(), t.values().end());
  return Tensor({n, s0.c, s0.h, s0.w}, std::move(values), items.front().precision());
}

Tensor batch_item(const Tensor& t, std::int64_t index) {
  const Shape& s = t.shape();
  if (index < 0 || index >= s.n) throw IndexError(fmt::format("batch index {} of {}", index, s.n));
  const std::int64_t per = s.c * s.h * s.w;
  const auto begin = t.values().begin() + index * per;
  return Tensor({1, s.c, s.h, s.w}, std::vector<double>(begin, begin + per), t.precision());
}

Batch sample_batch(const Dataset& data, Rng& rng, std::int64_t crop, std::int64_t batch,
                   Precision precision) {
  if (data.size() == 0) throw DataError("sample_batch: empty dataset");
  std::uniform_int_distribution<std::int64_t> pick(0, static_cast<std::int64_t>(data.size()) - 1);
  Batch b;
  std::vector<Tensor> xs;
  std::vector<Tensor> gts;
  for (std::int64_t k = 0; k < batch; ++k) {
    CropWindow w;
    w.image = pick(rng);
    const Shape& s = data.inputs[static_cast<std::size_t>(w.image)].shape();
    if (s.h < crop || s.w < crop) {
      throw DataError(fmt::format("image {} is {}x{}, smaller than crop {}",
                                  data.names[static_cast<std::size_t>(w.image)], s.h, s.w, crop));
    }
    w.top = std::uniform_int_distribution<std::int64_t>(0, s.h - crop)(rng);
    w.left = std::uniform_int_distribution<std::int64_t>(0, s.w - crop)(rng);
    const auto i = static_cast<std::size_t>(w.image);
    xs.push_back(crop_image(data.inputs[i], w.top, w.left, crop).to(precision));
    gts.push_back(crop_image(data.targets[i], w.top, w.left, crop).to(precision));
    b.windows.push_back(w);
  }
  b.x = stack_batch(xs);
  b.gt = stack_batch(gts);
  return b;
}

// ---- generator state ------------------------------------------------------------

std::vector<std::uint32_t> rng_state_words(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  std::istringstream is(os.str());
  std::vector<std::uint32_t> words;
  unsigned long long v = 0;
  while (is >> v) {
    words.push_back(static_cast<std::uint32_t>(v >> 32));
    words.push_back(static_cast<std::uint32_t>(v & 0xFFFFFFFFull));
  }
  return words;
}

void restore_rng(Rng& rng, const std::vector<std::uint32_t>& words) {
  if (words.size() % 2 != 0) throw LoadError("generator state has an odd number of words");
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); i += 2) {
    const unsigned long long v = (static_cast<unsigned long long>(words[i]) << 32) | words[i + 1];
    if (i > 0) os << ' ';
    os << v;
  }
  std::istringstream is(os.str());
  is >> rng;
  if (is.fail()) throw LoadError("generator state could not be restored");
}

// ---- trainer --------------------------------------------------------------------

std::string format_log_line(const StepStats& s) {
  return fmt::format("iter={} lr={:.6g} loss={:.6f} l1={:.6f} msssim={:.6f}", s.iter, s.lr, s.loss,
                     s.l1, s.msssim);
}

namespace {

Model make_model(const ModelConfig& cfg, const TrainConfig& tcfg, Rng& rng, const ParamStore* vgg) {
  cfg.validate();
  tcfg.validate();
  return Model(cfg, rng, vgg, tcfg.precision);
}

}  // namespace

Trainer::Trainer(ModelConfig model_cfg, TrainConfig train_cfg, Dataset data, const ParamStore* vgg)
    : Trainer(
          [&] {
            Rng init(train_cfg.seed);
            Model m = make_model(model_cfg, train_cfg, init, vgg);
            return std::pair<Model, Rng>(std::move(m), init);
          }(),
          std::move(train_cfg), std::move(data)) {}

Trainer::Trainer(std::pair<Model, Rng> seeded, TrainConfig train_cfg, Dataset data)
    : model_(std::move(seeded.first)),
      tcfg_(std::move(train_cfg)),
      data_(std::move(data)),
      rng_(seeded.second) {}

std::vector<Tensor> Trainer::batch_features(const Batch& b) {
  std::vector<std::vector<Tensor>> per_level(4);
  for (std::size_t k = 0; k < b.windows.size(); ++k) {
    const CropWindow& w = b.windows[k];
    auto it = vgg_cache_.find(w);
    std::vector<Tensor> feats;
    if (it != vgg_cache_.end()) {
      feats = it->second;
    } else {
      feats = model_.vgg_features(batch_item(b.x, static_cast<std::int64_t>(k)));
      if (vgg_cache_.size() < tcfg_.vgg_cache_limit) vgg_cache_.emplace(w, feats);
    }
    for (std::size_t l = 0; l < 4; ++l) per_level[l].push_back(std::move(feats[l]));
  }
  std::vector<Tensor> out;
  for (auto& level : per_level) out.push_back(stack_batch(level));
  return out;
}

StepStats Trainer::step() {
  const ModelConfig& cfg = model_.config();
  StepStats s;
  s.lr = lr_at(iter_, tcfg_);
  const Batch b = sample_batch(data_, rng_, tcfg_.crop, tcfg_.batch, model_.precision());

  std::vector<Tensor> feats;
  const std::vector<Tensor>* features = nullptr;
  if (cfg.uses_vgg() && !cfg.vgg_input_grad) {
    feats = batch_features(b);
    features = &feats;
  }

  Tape tape;
  ParamBinder binder(model_.params(), &tape);
  const ForwardTrace trace = model_.forward(Var(b.x), binder, features);
  const LossTerms lt = combined_loss(trace.output, Var(b.gt), cfg.lambda);
  s.loss = lt.total.value().item();
  s.l1 = lt.l1.value().item();
  s.msssim = lt.msssim.value().item();
  if (!std::isfinite(s.loss)) {
    std::string windows;
    for (const CropWindow& w : b.windows) {
      windows += fmt::format(" {}@({},{})", data_.names[static_cast<std::size_t>(w.image)], w.top,
                             w.left);
    }
    throw NumericError(fmt::format("non-finite loss {} at iteration {}; batch:{}", s.loss,
                                   iter_ + 1, windows));
  }
  const GradMap grads = tape.backward(lt.total);
  for (const auto& [name, g] : grads.entries()) {
    if (!g.all_finite()) {
      throw NumericError(fmt::format("non-finite gradient for {} at iteration {}", name, iter_ + 1));
    }
  }
  adam_step(model_.params(), grads, adam_, s.lr, tcfg_);
  ++iter_;
  s.iter = iter_;
  return s;
}

void Trainer::run(const std::function<void(const StepStats&)>& on_step,
                  const std::function<void(const Trainer&)>& on_checkpoint) {
  while (iter_ < tcfg_.iters) {
    const StepStats s = step();
    if (on_step) on_step(s);
    if (on_checkpoint && tcfg_.checkpoint_every > 0 && iter_ % tcfg_.checkpoint_every == 0 &&
        iter_ < tcfg_.iters) {
      on_checkpoint(*this);
    }
  }
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

void put_meta(ParamStore& s, const std::string& key, double v) {
  s.add("meta." + key, Tensor::scalar(v));
}

double get_meta(const ParamStore& s, const std::string& key) {
  const std::string name = "meta." + key;
  if (!s.contains(name)) throw LoadError("checkpoint is missing " + name);
  return s.at(name).item();
}

bool has_prefix(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

ParamStore Trainer::checkpoint() const {
  const ModelConfig& m = model_.config();
  const ParamStore& params = model_.params();
  ParamStore out;
  for (const auto& e : params.entries()) out.add(e.name, e.value);
  for (const char* which : {"m", "v"}) {
    const auto& moments = which[0] == 'm' ? adam_.m : adam_.v;
    for (const auto& e : params.entries()) {
      if (params.is_frozen(e.name)) continue;
      auto it = moments.find(e.name);
      out.add(fmt::format("adam.{}.{}", which, e.name),
              it != moments.end() ? it->second : Tensor(e.value.shape()));
    }
  }
  put_meta(out, "iter", static_cast<double>(iter_));
  put_meta(out, "adam_t", static_cast<double>(adam_.t));
  put_meta(out, "iters", static_cast<double>(tcfg_.iters));
  put_meta(out, "batch", static_cast<double>(tcfg_.batch));
  put_meta(out, "crop", static_cast<double>(tcfg_.crop));
  put_meta(out, "lr0", tcfg_.lr0);
  put_meta(out, "lr_decay", tcfg_.lr_decay);
  put_meta(out, "lr_period", static_cast<double>(tcfg_.lr_period));
  put_meta(out, "beta1", tcfg_.beta1);
  put_meta(out, "beta2", tcfg_.beta2);
  put_meta(out, "eps_adam", tcfg_.eps_adam);
  put_meta(out, "seed_hi", static_cast<double>(tcfg_.seed >> 32));
  put_meta(out, "seed_lo", static_cast<double>(tcfg_.seed & 0xFFFFFFFFull));
  put_meta(out, "precision", static_cast<double>(tcfg_.precision));
  put_meta(out, "checkpoint_every", static_cast<double>(tcfg_.checkpoint_every));
  put_meta(out, "log_every", static_cast<double>(tcfg_.log_every));
  put_meta(out, "lambda", m.lambda);
  put_meta(out, "c0", static_cast<double>(m.base_channels));
  put_meta(out, "sem", static_cast<double>(m.sem_channels));
  put_meta(out, "ctl_reduction", static_cast<double>(m.ctl_reduction));
  put_meta(out, "branch_mode", static_cast<double>(m.branch_mode));
  put_meta(out, "embed_site", static_cast<double>(m.embed_site));
  put_meta(out, "fdnet", m.fdnet_enabled ? 1.0 : 0.0);
  put_meta(out, "cfrm", m.cfrm_enabled ? 1.0 : 0.0);
  put_meta(out, "cfrm_shared", m.cfrm_shared ? 1.0 : 0.0);
  put_meta(out, "vgg_input_grad", m.vgg_input_grad ? 1.0 : 0.0);
  const std::vector<std::uint32_t> words = rng_state_words(rng_);
  const Shape rng_shape{static_cast<std::int64_t>(words.size()), 1, 1, 1};
  out.add("meta.rng", Tensor(rng_shape, std::vector<double>(words.begin(), words.end())));
  return out;
}

ModelConfig checkpoint_model_config(const ParamStore& ck) {
  ModelConfig m;
  m.lambda = get_meta(ck, "lambda");
  m.base_channels = static_cast<std::int64_t>(get_meta(ck, "c0"));
  m.sem_channels = static_cast<std::int64_t>(get_meta(ck, "sem"));
  m.ctl_reduction = static_cast<std::int64_t>(get_meta(ck, "ctl_reduction"));
  const auto mode = static_cast<int>(get_meta(ck, "branch_mode"));
  if (mode < 0 || mode > static_cast<int>(BranchMode::none)) throw LoadError("bad meta.branch_mode");
  m.branch_mode = static_cast<BranchMode>(mode);
  m.embed_site = get_meta(ck, "embed_site") != 0.0 ? EmbedSite::encoder : EmbedSite::decoder;
  m.fdnet_enabled = get_meta(ck, "fdnet") != 0.0;
  m.cfrm_enabled = get_meta(ck, "cfrm") != 0.0;
  m.cfrm_shared = get_meta(ck, "cfrm_shared") != 0.0;
  m.vgg_input_grad = get_meta(ck, "vgg_input_grad") != 0.0;
  m.validate();
  return m;
}

TrainConfig checkpoint_train_config(const ParamStore& ck) {
  TrainConfig t;
  t.iters = static_cast<std::int64_t>(get_meta(ck, "iters"));
  t.batch = static_cast<std::int64_t>(get_meta(ck, "batch"));
  t.crop = static_cast<std::int64_t>(get_meta(ck, "crop"));
  t.lr0 = get_meta(ck, "lr0");
  t.lr_decay = get_meta(ck, "lr_decay");
  t.lr_period = static_cast<std::int64_t>(get_meta(ck, "lr_period"));
  t.beta1 = get_meta(ck, "beta1");
  t.beta2 = get_meta(ck, "beta2");
  t.eps_adam = get_meta(ck, "eps_adam");
  t.seed = (static_cast<std::uint64_t>(get_meta(ck, "seed_hi")) << 32) |
           static_cast<std::uint64_t>(get_meta(ck, "seed_lo"));
  t.precision = get_meta(ck, "precision") != 0.0 ? Precision::f64 : Precision::f32;
  t.checkpoint_every = static_cast<std::int64_t>(get_meta(ck, "checkpoint_every"));
  t.log_every = static_cast<std::int64_t>(get_meta(ck, "log_every"));
  return t;
}

Model model_from_checkpoint(const ParamStore& ck) {
  const ModelConfig cfg = checkpoint_model_config(ck);
  const Precision precision =
      get_meta(ck, "precision") != 0.0 ? Precision::f64 : Precision::f32;
  ParamStore vgg;
  ParamStore weights;
  for (const auto& e : ck.entries()) {
    if (has_prefix(e.name, "adam.") || has_prefix(e.name, "meta.")) continue;
    weights.add(e.name, e.value);
    if (has_prefix(e.name, "vgg.")) vgg.add(e.name, e.value);
  }
  Rng unused(0);
  Model model(cfg, unused, cfg.uses_vgg() ? &vgg : nullptr, precision);
  model.load_params(weights);
  return model;
}

Trainer Trainer::resume(const ParamStore& ck, Dataset data,
                        std::optional<std::int64_t> iters_override) {
  TrainConfig tcfg = checkpoint_train_config(ck);
  if (iters_override) tcfg.iters = *iters_override;
  tcfg.validate();
  if (!ck.contains("meta.rng")) throw LoadError("checkpoint is missing meta.rng");
  std::vector<std::uint32_t> words;
  for (double v : ck.at("meta.rng").data()) words.push_back(static_cast<std::uint32_t>(v));
  Rng rng;
  restore_rng(rng, words);

  Trainer t(std::pair<Model, Rng>(model_from_checkpoint(ck), rng), std::move(tcfg),
            std::move(data));
  t.iter_ = static_cast<std::int64_t>(get_meta(ck, "iter"));
  t.adam_.t = static_cast<std::int64_t>(get_meta(ck, "adam_t"));
  const ParamStore& params = t.model_.params();
  for (const auto& e : params.entries()) {
    if (params.is_frozen(e.name)) continue;
    for (const char* which : {"m", "v"}) {
      const std::string key = fmt::format("adam.{}.{}", which, e.name);
      if (!ck.contains(key)) throw LoadError("checkpoint is missing " + key);
      Tensor moment = ck.at(key).to(Precision::f64);
      if (!(moment.shape() == e.value.shape())) throw LoadError("shape mismatch for " + key);
      (which[0] == 'm' ? t.adam_.m : t.adam_.v).emplace(e.name, std::move(moment));
    }
  }
  return t;
}

void train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const fs::path& dataset_dir,
           const fs::path& vgg_path, const fs::path& out_path, std::ostream* log,
           const std::optional<fs::path>& resume_from) {
  model_cfg.validate();
  train_cfg.validate();
  Dataset data = load_dataset(dataset_dir, train_cfg.crop);

  auto make = [&]() -> Trainer {
    if (resume_from) return Trainer::resume(read_weights(*resume_from), std::move(data), train_cfg.iters);
    ParamStore vgg;
    if (model_cfg.uses_vgg()) vgg = read_weights(vgg_path);
    return Trainer(model_cfg, train_cfg, std::move(data), model_cfg.uses_vgg() ? &vgg : nullptr);
  };
  Trainer trainer = make();
  const std::int64_t every = trainer.train_config().log_every;
  const std::int64_t total = trainer.train_config().iters;
  trainer.run(
      [&](const StepStats& s) {
        if (log != nullptr && (s.iter % every == 0 || s.iter == total)) {
          *log << format_log_line(s) << '\n' << std::flush;
        }
      },
      [&](const Trainer& t) { write_weights(t.checkpoint(), out_path); });
  write_weights(trainer.checkpoint(), out_path);
}

}  // namespace stsc
