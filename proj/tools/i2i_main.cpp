// i2i: synthetic data, training, translation, evaluation and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "i2i/check_suite.hpp"
#include "i2i/config.hpp"
#include "i2i/errors.hpp"
#include "i2i/eval.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"
#include "i2i/synth.hpp"
#include "i2i/trainer.hpp"

namespace fs = std::filesystem;
using namespace i2i;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kNumeric = 3, kInsufficient = 4, kGradCheck = 5 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

int cmd_gen_data(const fs::path& out, std::size_t count, std::uint64_t seed) {
  generate_dataset(out, count, seed);
  std::cout << "wrote " << count << " images per domain to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const fs::path& config_path, const std::optional<fs::path>& resume) {
  const RunConfig cfg = load_run_config(config_path);
  const Dataset data = load_dataset(cfg.data_dir);
  fs::create_directories(cfg.out_dir);
  const std::string resolved = to_json(cfg);
  write_text(cfg.out_dir / "config_resolved.json", resolved);

  TrainOptions opts;
  opts.out_dir = cfg.out_dir;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.sample_every = cfg.sample_every;
  opts.log_wall_time = cfg.log_wall_time;
  opts.resume_from = resume;
  opts.config_json = resolved;
  opts.on_step = [&](const StepMetrics& m) {
    if (m.step % 100 == 0 || m.step == cfg.train.steps) {
      std::printf("step %llu  loss_d %.4f  loss_g %.4f  recon %.4f %.4f\n", static_cast<unsigned long long>(m.step),
                  m.loss_d, m.loss_g, m.recon[0], m.recon[1]);
      std::fflush(stdout);
    }
  };
  const TrainResult r = run_training(cfg.train, data, opts);
  std::cout << "finished at step " << r.final_step << "\n";
  return kOk;
}

// X inputs translate to Y and vice versa; the reference, if any, is a target-domain image.
int cmd_translate(const fs::path& ckpt, const fs::path& input, std::size_t samples,
                  const std::optional<fs::path>& reference, const fs::path& out, std::uint64_t seed) {
  const Networks nets = load_networks(ckpt);
  const Tensor img = read_image(input);
  const Domain source = img.dim(0) == nets.arch.x.channels ? Domain::x : Domain::y;
  const ImageShape& s = nets.arch.image(source);
  if (img.shape() != Shape{s.channels, s.height, s.width}) {
    throw ShapeError("input " + input.string() + " is " + shape_str(img.shape()) + ", checkpoint expects " +
                     shape_str({s.channels, s.height, s.width}));
  }
  const Tensor batch = reshape(img, {1, s.channels, s.height, s.width});
  const char* ext = source == Domain::x ? ".ppm" : ".pgm";
  fs::create_directories(out);
  NoGradGuard no_grad;
  const Tensor c = encode_invariant(nets, source, batch);
  if (reference) {
    const Tensor ref = read_image(*reference);
    const Domain target = other(source);
    const ImageShape& t = nets.arch.image(target);
    if (ref.shape() != Shape{t.channels, t.height, t.width}) {
      throw ShapeError("reference " + reference->string() + " is " + shape_str(ref.shape()) + ", expected " +
                       shape_str({t.channels, t.height, t.width}));
    }
    const Tensor v = encode_specific(nets, target, reshape(ref, {1, t.channels, t.height, t.width})).mu;
    const Tensor y = generate(nets, target, c, v);
    write_image(out / (std::string("reference") + ext), reshape(y, {t.channels, t.height, t.width}));
    std::cout << "wrote 1 image to " << out.string() << "\n";
    return kOk;
  }
  Rng rng = make_stream(seed, "translate-v");
  const ImageShape& t = nets.arch.image(other(source));
  for (std::size_t k = 0; k < samples; ++k) {
    const Tensor v = normal_tensor(rng, {1, nets.arch.code_dim});
    const Tensor y = generate(nets, other(source), c, v);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu%s", k, ext);
    write_image(out / name, reshape(y, {t.channels, t.height, t.width}));
  }
  std::cout << "wrote " << samples << " images to " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const std::optional<fs::path>& config,
             const std::optional<fs::path>& out) {
  const CheckpointInfo info = read_checkpoint_info(ckpt);
  EvalSettings settings;
  std::string config_json = info.config_json;
  if (config) {
    const RunConfig rc = load_run_config(*config);
    settings = rc.eval;
    config_json = to_json(rc);
  } else if (!info.config_json.empty()) {
    settings = parse_run_config(info.config_json).eval;
  }
  const Networks nets = load_networks(ckpt);
  const Dataset data = load_dataset(data_dir);
  const EvalReport report = evaluate(nets, data, settings);
  const fs::path dir = out ? *out : (ckpt.has_parent_path() ? ckpt.parent_path() : fs::path("."));
  fs::create_directories(dir);
  write_text(dir / "eval_report.json", report_json(report, config_json, ckpt.filename().string()));
  write_contact_sheets(dir, nets, data, settings);
  std::printf("diversity %.6f (fixed-v %.6f, within-input %.6f)  fid_lite %.4f  max|rho| %.3f  median IoU %.3f\n",
              report.diversity.score, report.diversity_baseline, report.diversity.per_input, report.fid_lite,
              report.probe.max_abs_rho, report.probe.median_iou);
  return kOk;
}

int cmd_grad_check(std::uint64_t seed, double corrupt) {
  GradCheckOptions options;
  options.analytic_scale = corrupt;
  const double tolerance = 1e-4;
  const auto rows = run_suite(full_suite(seed), tolerance, options);
  std::printf("%-11s %-28s %12s %8s %8s  %s\n", "group", "case", "max_rel_err", "checked", "skipped", "status");
  std::size_t failed = 0;
  for (const auto& r : rows) {
    std::printf("%-11s %-28s %12.3e %8zu %8zu  %s\n", r.group.c_str(), r.name.c_str(), r.result.max_rel_error,
                r.result.checked, r.result.skipped, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      ++failed;
      std::fprintf(stderr, "grad-check failed: %s/%s relative error %.3e (tolerance %.0e)\n", r.group.c_str(),
                   r.name.c_str(), r.result.max_rel_error, tolerance);
    }
  }
  std::printf("%zu of %zu cases passed\n", rows.size() - failed, rows.size());
  return failed == 0 ? kOk : kGradCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal unpaired image-to-image translation on synthetic shapes"};
  app.require_subcommand(1);

  fs::path gen_out;
  std::size_t gen_count = 0;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic shapes dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Images per domain")->required();
  gen->add_option("--seed", gen_seed, "Master seed");

  fs::path train_config;
  std::optional<fs::path> train_resume;
  auto* train = app.add_subcommand("train", "Train from a JSON config");
  train->add_option("--config", train_config, "Run config")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", train_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  fs::path tr_ckpt, tr_input, tr_out = "translations";
  std::size_t tr_samples = 1;
  std::optional<fs::path> tr_reference;
  std::uint64_t tr_seed = 0;
  auto* translate = app.add_subcommand("translate", "Translate one image to the other domain");
  translate->add_option("--ckpt", tr_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--input", tr_input, "Input PGM (X) or PPM (Y)")->required();
  translate->add_option("--samples", tr_samples, "Outputs with v drawn from N(0, I)");
  translate->add_option("--reference", tr_reference, "Target-domain image whose specific code is reused");
  translate->add_option("--out", tr_out, "Output directory");
  translate->add_option("--seed", tr_seed, "Seed for the sampled codes");

  fs::path ev_ckpt, ev_data;
  std::optional<fs::path> ev_config, ev_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--config", ev_config, "Run config for eval settings (default: the one stored in the checkpoint)");
  eval->add_option("--out", ev_out, "Report directory (default: the checkpoint's directory)");

  std::uint64_t gc_seed = 0;
  double gc_corrupt = 1.0;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "Seed for the test inputs");
  // Test hook: scales every analytic gradient, so the suite must fail.
  gc->add_option("--corrupt-gradient", gc_corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_count, gen_seed);
    if (*train) return cmd_train(train_config, train_resume);
    if (*translate) return cmd_translate(tr_ckpt, tr_input, tr_samples, tr_reference, tr_out, tr_seed);
    if (*eval) return cmd_eval(ev_ckpt, ev_data, ev_config, ev_out);
    if (*gc) return cmd_grad_check(gc_seed, gc_corrupt);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FingerprintError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const InsufficientDataError& e) {
    std::cerr << "insufficient data: " << e.what() << "\n";
    return kInsufficient;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
