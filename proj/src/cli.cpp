#include "stsc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "stsc/gradcheck.hpp"
#include "stsc/io.hpp"
#include "stsc/metrics.hpp"
#include "stsc/runtime.hpp"
#include "stsc/train.hpp"

namespace stsc {

namespace fs = std::filesystem;

namespace {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor reflect_pad(const Tensor& image, std::int64_t multiple) {
  const Shape& s = image.shape();
  const std::int64_t h = (s.h + multiple - 1) / multiple * multiple;
  const std::int64_t w = (s.w + multiple - 1) / multiple * multiple;
  Tensor out({s.n, s.c, h, w}, image.precision());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = reflect_index(y, s.h);
        for (std::int64_t x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, sy, reflect_index(x, s.w));
      }
    }
  }
  return out;
}

Tensor crop_top_left(const Tensor& image, std::int64_t h, std::int64_t w) {
  const Shape& s = image.shape();
  if (h > s.h || w > s.w) throw GeometryError("crop_top_left: window exceeds " + s.str());
  Tensor out({s.n, s.c, h, w}, image.precision());
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, y, x);
      }
    }
  }
  return out;
}

Tensor enhance_image(const Model& model, const Tensor& image) {
  const Tensor padded = reflect_pad(image, 16);
  return crop_top_left(enhance(model, padded), image.shape().h, image.shape().w);
}

namespace {

struct TrainArgs {
  std::string data, vgg, out, resume;
  std::int64_t iters = 100000, batch = 8, crop = 224, seed = 0, c0 = 16, sem = 64;
  std::int64_t checkpoint_every = 0, log_every = 1;
  double lr = 5e-4, lambda = 0.8;
  std::string ablation = "full", embed = "decoder", precision = "float";
};

struct EnhanceArgs {
  std::string ckpt, in, out;
};

struct EvalArgs {
  std::string enh, ref, metrics = "psnr,ssim,uiqm", report;
};

struct GradcheckArgs {
  std::string scale = "tiny", precision = "double", fault = "none";
  double tol = 1e-5;
  int coords = 100;
  std::int64_t seed = 20240601;
};

struct StandinArgs {
  std::string out, precision = "float";
  std::int64_t seed = 0;
};

Precision parse_precision(const std::string& s) {
  if (s == "float" || s == "f32") return Precision::f32;
  if (s == "double" || s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected float or double)");
}

void echo(std::ostream& out, const std::string& cmd,
          const std::vector<std::pair<std::string, std::string>>& kv) {
  out << "config " << cmd << ":";
  for (const auto& [k, v] : kv) out << ' ' << k << '=' << v;
  out << '\n' << std::flush;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ModelConfig mcfg = ModelConfig::for_ablation(parse_ablation(a.ablation));
  mcfg.embed_site = parse_embed_site(a.embed);
  mcfg.base_channels = a.c0;
  mcfg.sem_channels = a.sem;
  mcfg.lambda = a.lambda;
  TrainConfig tcfg;
  tcfg.iters = a.iters;
  tcfg.batch = a.batch;
  tcfg.crop = a.crop;
  tcfg.lr0 = a.lr;
  if (a.seed < 0) throw ConfigError("seed must be non-negative");
  tcfg.seed = static_cast<std::uint64_t>(a.seed);
  tcfg.precision = parse_precision(a.precision);
  tcfg.checkpoint_every = a.checkpoint_every;
  tcfg.log_every = a.log_every;
  echo(out, "train",
       {{"data", a.data}, {"vgg", a.vgg}, {"out", a.out}, {"resume", a.resume.empty() ? "none" : a.resume},
        {"iters", std::to_string(tcfg.iters)}, {"batch", std::to_string(tcfg.batch)},
        {"crop", std::to_string(tcfg.crop)}, {"lr", fmt::format("{:g}", tcfg.lr0)},
        {"lr_decay", fmt::format("{:g}", tcfg.lr_decay)}, {"lr_period", std::to_string(tcfg.lr_period)},
        {"beta1", fmt::format("{:g}", tcfg.beta1)}, {"beta2", fmt::format("{:g}", tcfg.beta2)},
        {"eps", fmt::format("{:g}", tcfg.eps_adam)}, {"seed", std::to_string(tcfg.seed)},
        {"precision", to_string(tcfg.precision)}, {"lambda", fmt::format("{:g}", mcfg.lambda)},
        {"c0", std::to_string(mcfg.base_channels)}, {"sem", std::to_string(mcfg.sem_channels)},
        {"ctl_reduction", std::to_string(mcfg.ctl_reduction)}, {"ablation", a.ablation},
        {"branch_mode", to_string(mcfg.branch_mode)}, {"fdnet", mcfg.fdnet_enabled ? "on" : "off"},
        {"cfrm", mcfg.cfrm_enabled ? "on" : "off"}, {"embed", to_string(mcfg.embed_site)},
        {"checkpoint_every", std::to_string(tcfg.checkpoint_every)},
        {"log_every", std::to_string(tcfg.log_every)}, {"threads", std::to_string(thread_count())}});
  mcfg.validate();
  tcfg.validate();
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = a.resume;
  train(mcfg, tcfg, a.data, a.vgg, a.out, &out, resume);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

int cmd_enhance(const EnhanceArgs& a, std::ostream& out, std::ostream& err) {
  echo(out, "enhance", {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out}, {"pad_multiple", "16"},
                        {"pad_mode", "reflect"}, {"threads", std::to_string(thread_count())}});
  const Model model = model_from_checkpoint(read_weights(a.ckpt));
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.in)) {
    fs::create_directories(a.out);
    for (const auto& name : list_files(a.in)) jobs.emplace_back(fs::path(a.in) / name, fs::path(a.out) / name);
  } else if (fs::is_regular_file(a.in)) {
    jobs.emplace_back(a.in, a.out);
  } else {
    throw DataError("input does not exist: " + a.in);
  }
  int failures = 0;
  for (const auto& [src, dst] : jobs) {
    try {
      write_image(enhance_image(model, read_image(src)), dst);
      out << "enhanced " << src.string() << " -> " << dst.string() << '\n';
    } catch (const Error& e) {
      ++failures;
      err << "failed " << src.string() << ": " << e.what() << '\n';
    }
  }
  return failures == 0 ? kExitOk : kExitData;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const MetricSet metrics = parse_metrics(a.metrics);
  echo(out, "eval", {{"enh", a.enh}, {"ref", a.ref.empty() ? "none" : a.ref}, {"metrics", a.metrics},
                     {"report", a.report.empty() ? "stdout" : a.report},
                     {"threads", std::to_string(thread_count())}});
  if (metrics.full_reference() && a.ref.empty()) {
    throw ConfigError("--metrics " + a.metrics + " needs --ref for psnr/ssim");
  }
  std::optional<fs::path> ref;
  if (!a.ref.empty()) ref = a.ref;
  const MetricReport report = evaluate_dir(a.enh, ref, metrics);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  for (const auto& e : report.errors) err << "error: " << e << '\n';
  if (a.report.empty()) {
    write_csv(report, out);
  } else {
    std::ofstream f(a.report);
    if (!f) throw DataError("cannot write report " + a.report);
    write_csv(report, f);
  }
  if (report.empty()) {
    err << "no images evaluated in " << a.enh << '\n';
    return kExitData;
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (a.scale != "tiny") throw ConfigError("--scale supports only 'tiny'");
  GradcheckOptions opts;
  opts.tol = a.tol;
  opts.coords = a.coords;
  opts.precision = parse_precision(a.precision);
  opts.seed = static_cast<std::uint64_t>(a.seed);
  Fault fault = Fault::none;
  if (a.fault == "conv2d") {
    fault = Fault::conv2d_backward;
  } else if (a.fault != "none") {
    throw ConfigError("unknown fault '" + a.fault + "'");
  }
  echo(out, "gradcheck",
       {{"scale", a.scale}, {"tol", fmt::format("{:g}", opts.tol)}, {"eps", fmt::format("{:g}", opts.eps)},
        {"coords", std::to_string(opts.coords)}, {"rel_floor", fmt::format("{:g}", opts.rel_floor)},
        {"precision", to_string(opts.precision)}, {"seed", std::to_string(opts.seed)},
        {"fault", a.fault}, {"threads", std::to_string(thread_count())}});
  ScopedFault guard(fault);
  const GradcheckReport report = run_gradcheck(opts, [&](const ComponentResult& r) {
    out << fmt::format("{:<44} max_rel_err={:.3e} checked={} skipped={} {}\n", r.name,
                       r.max_rel_error, r.checked, r.skipped, r.passed ? "PASS" : "FAIL")
        << std::flush;
  });
  if (const ComponentResult* worst = report.worst_offender()) {
    out << fmt::format("gradcheck FAILED: worst offender {} (max_rel_err={:.3e} at {})\n",
                       worst->name, worst->max_rel_error, worst->worst_coordinate);
    return kExitGradcheck;
  }
  out << "gradcheck passed\n";
  return kExitOk;
}

int cmd_standin(const StandinArgs& a, std::ostream& out) {
  const Precision p = parse_precision(a.precision);
  echo(out, "standin-vgg", {{"out", a.out}, {"seed", std::to_string(a.seed)}, {"precision", to_string(p)}});
  write_weights(make_standin_vgg(static_cast<std::uint64_t>(a.seed), p), a.out);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Texture-structure underwater image enhancement"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", ta.data, "Dataset root with input/ and gt/")->required();
  train_cmd->add_option("--vgg", ta.vgg, "VGG16 weights (STSCW)")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--iters", ta.iters, "Iterations")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--crop", ta.crop, "Crop size (multiple of 16)")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--c0", ta.c0, "Base channel width")->capture_default_str();
  train_cmd->add_option("--sem", ta.sem, "Semantic feature width")->capture_default_str();
  train_cmd->add_option("--lambda", ta.lambda, "MS-SSIM weight in the loss")->capture_default_str();
  train_cmd->add_option("--ablation", ta.ablation, "m0, m1, m2, m3, m4, no_cfrm or full")
      ->capture_default_str();
  train_cmd->add_option("--embed", ta.embed, "encoder or decoder")->capture_default_str();
  train_cmd->add_option("--precision", ta.precision, "float or double")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval (0: end only)")
      ->capture_default_str();
  train_cmd->add_option("--log-every", ta.log_every, "Log interval")->capture_default_str();
  train_cmd->add_option("--resume", ta.resume, "Continue from a checkpoint");

  EnhanceArgs ea;
  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance an image or a directory of images");
  enhance_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  enhance_cmd->add_option("--in", ea.in, "Input PPM or directory")->required();
  enhance_cmd->add_option("--out", ea.out, "Output PPM or directory")->required();

  EvalArgs va;
  auto* eval_cmd = app.add_subcommand("eval", "Score a directory of images");
  eval_cmd->add_option("--enh", va.enh, "Enhanced images")->required();
  eval_cmd->add_option("--ref", va.ref, "Reference images (psnr, ssim)");
  eval_cmd->add_option("--metrics", va.metrics, "Comma-separated psnr,ssim,uiqm")->capture_default_str();
  eval_cmd->add_option("--report", va.report, "CSV output path (default: stdout)");

  GradcheckArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--scale", ga.scale, "Problem size")->capture_default_str();
  grad_cmd->add_option("--tol", ga.tol, "Maximum relative error")->capture_default_str();
  grad_cmd->add_option("--precision", ga.precision, "float or double")->capture_default_str();
  grad_cmd->add_option("--coords", ga.coords, "Coordinates per component")->capture_default_str();
  grad_cmd->add_option("--seed", ga.seed, "Sampling seed")->capture_default_str();
  grad_cmd->add_option("--inject-fault", ga.fault)->group("");

  StandinArgs sa;
  auto* standin_cmd = app.add_subcommand("standin-vgg", "Write randomly initialized VGG16 weights");
  standin_cmd->add_option("--out", sa.out, "Output STSCW path")->required();
  standin_cmd->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  standin_cmd->add_option("--precision", sa.precision, "float or double")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*enhance_cmd) return cmd_enhance(ea, out, err);
    if (*eval_cmd) return cmd_eval(va, out, err);
    if (*grad_cmd) return cmd_gradcheck(ga, out);
    if (*standin_cmd) return cmd_standin(sa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const LayoutError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return kExitData;
  } catch (const LoadError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace stsc
