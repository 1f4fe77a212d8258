// Acceptance run: one PASS/FAIL line per criterion, exit 1 if a gated one fails.
// Usage: acceptance [work_dir] [--no-training]
// --no-training runs only the quick criteria (1-4 and 7).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "i2i/check_suite.hpp"
#include "i2i/config.hpp"
#include "i2i/divergence.hpp"
#include "i2i/eval.hpp"
#include "i2i/rng.hpp"
#include "i2i/synth.hpp"
#include "i2i/trainer.hpp"

namespace fs = std::filesystem;
using namespace i2i;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail, bool gated = true) {
  const char* status = pass ? "PASS" : (gated ? "FAIL" : "NOTE");
  std::printf("[%s] %-4s %s\n", status, id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass && gated) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void criterion_grad_check() {
  const auto t0 = Clock::now();
  const auto rows = run_suite(full_suite(0), 1e-4);
  const double secs = seconds_since(t0);
  std::size_t passed = 0;
  double worst = 0.0;
  for (const auto& r : rows) {
    passed += r.passed;
    worst = std::max(worst, r.result.max_rel_error);
  }
  report("1", passed == rows.size() && secs <= 60.0,
         fmt("grad-check: %zu/%zu cases, worst relative error %.2e, %.1f s", passed, rows.size(), worst, secs));
}

void criterion_kl() {
  const auto t0 = Clock::now();
  std::size_t inside = 0;
  double worst_z = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    Rng rng = make_stream(11, "acceptance-kl", i);
    DiagonalGaussian g{normal_tensor(rng, {8}), normal_tensor(rng, {8}, 0.5)};
    const auto mc = kl_mc_estimate(g, 100000, 100 + i);
    const double z = std::abs(mc.estimate - kl_to_standard_normal(g).item()) / mc.standard_error;
    worst_z = std::max(worst_z, z);
    inside += z <= 3.0;
  }
  const double secs = seconds_since(t0);
  report("2", inside == 10 && secs <= 30.0,
         fmt("KL Monte Carlo: %zu/10 within 3 SE (worst %.2f SE), %.1f s", inside, worst_z, secs));
}

// The shifted set reuses the second set's noise, so each trial compares the
// two alternatives on the same draws.
void criterion_mmd() {
  const double sigma = default_mmd_bandwidth(8);
  Rng rng = make_stream(12, "acceptance-mmd-self");
  const Tensor s = normal_tensor(rng, {500, 8});
  const bool self_zero = mmd(s, s, sigma).item() == 0.0;
  std::size_t wins = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng r = make_stream(12, "acceptance-mmd", t);
    const Tensor p = normal_tensor(r, {500, 8});
    const Tensor q = normal_tensor(r, {500, 8});
    std::vector<double> shifted(q.values().begin(), q.values().end());
    for (double& v : shifted) v += 1.5;
    const Tensor shifted_q({500, 8}, std::move(shifted));
    wins += mmd(p, q, sigma).item() < mmd(p, shifted_q, sigma).item();
  }
  report("3", self_zero && wins >= 99,
         fmt("MMD: self-distance %s, same < shifted in %zu/100 trials", self_zero ? "exactly 0" : "NONZERO", wins));
}

void criterion_frechet() {
  auto one_d = [](double mean, double var) {
    GaussianStats s;
    s.mean = Eigen::VectorXd::Constant(1, mean);
    s.covariance = Eigen::MatrixXd::Constant(1, 1, var);
    return s;
  };
  Rng rng = make_stream(13, "acceptance-frechet");
  Eigen::MatrixXd a(200, 6), b(200, 6);
  const auto va = normal_values(rng, a.size()), vb = normal_values(rng, b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = va[i];
    b.data()[i] = 1.5 * vb[i] + 0.3 * static_cast<double>(i % 6);
  }
  const GaussianStats sa = fit_gaussian_stats(a), sb = fit_gaussian_stats(b);
  const double same = frechet_distance(sa, sa);
  const double shift = frechet_distance(one_d(0, 1), one_d(1, 1));
  const double asym = std::abs(frechet_distance(sa, sb) - frechet_distance(sb, sa));
  report("4", std::abs(same) <= 1e-9 && std::abs(shift - 1.0) <= 1e-9 && asym <= 1e-9,
         fmt("Frechet: identical %.1e, N(0,1) vs N(1,1) %.12f, asymmetry %.1e", same, shift, asym));
}

// Reduced-width architecture so 20k steps fit the single-core budget.
constexpr const char* kRunConfig = R"({
  "seed": 0,
  "arch": {"base_filters": 8, "code_channels": 16, "encoder_res_blocks": 2, "generator_res_blocks": 2},
  "train": {"steps": 20000, "batch_size": 16},
  "logging": {"checkpoint_every": 500, "sample_every": 1000}
})";

struct Run {
  fs::path dir;
  TrainResult result;
  double seconds = 0.0;
};

Run train(const RunConfig& cfg, const Dataset& data, const fs::path& dir, std::optional<fs::path> resume = {}) {
  fs::create_directories(dir);
  TrainOptions o;
  o.out_dir = dir;
  o.checkpoint_every = cfg.checkpoint_every;
  o.sample_every = cfg.sample_every;
  o.resume_from = std::move(resume);
  o.config_json = to_json(cfg);
  o.on_step = [&](const StepMetrics& m) {
    if (m.step % 1000 == 0) {
      std::fprintf(stderr, "  %s step %llu recon %.3f %.3f\n", dir.filename().c_str(),
                   static_cast<unsigned long long>(m.step), m.recon[0], m.recon[1]);
    }
  };
  const auto t0 = Clock::now();
  Run r{dir, run_training(cfg.train, data, o), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

EvalReport evaluate_checkpoint(const fs::path& ckpt, const Dataset& heldout, const EvalSettings& settings,
                               const std::string& config_json) {
  const EvalReport r = evaluate(load_networks(ckpt), heldout, settings);
  std::ofstream(ckpt.parent_path() / (ckpt.stem().string() + "_eval_report.json"), std::ios::binary)
      << report_json(r, config_json, ckpt.filename().string());
  return r;
}

double window_mean(const std::vector<StepMetrics>& m, std::size_t begin, std::size_t end, std::size_t cycle) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += m[i].recon[cycle];
  return s / static_cast<double>(end - begin);
}

void criteria_end_to_end(const fs::path& work, const Dataset& data, const Dataset& heldout) {
  const RunConfig cfg = parse_run_config(kRunConfig);
  const std::string cfg_json = to_json(cfg);
  const Run run = train(cfg, data, work / "run");
  const auto& m = run.result.metrics;

  // Cycle reconstruction loss per cycle: first 50 steps against the last 50.
  const std::size_t n = m.size();
  bool recon_ok = n >= 100;
  std::string recon_detail;
  for (std::size_t c = 0; c < 2 && n >= 100; ++c) {
    const double first = window_mean(m, 0, 50, c), last = window_mean(m, n - 50, n, c);
    recon_ok = recon_ok && first >= 5.0 * last;
    recon_detail += fmt(" cycle%zu %.3f -> %.3f (%.1fx)", c + 1, first, last, first / last);
  }
  report("5a", recon_ok, "reconstruction loss, first vs last 50 steps:" + recon_detail);

  const EvalReport fin = evaluate_checkpoint(run.dir / checkpoint_name(cfg.train.steps), heldout, cfg.eval, cfg_json);
  const EvalReport early = evaluate_checkpoint(run.dir / checkpoint_name(500), heldout, cfg.eval, cfg_json);
  report("5b", fin.diversity.score >= 2.0 * fin.diversity_baseline,
         fmt("diversity %.4f vs fixed-v baseline %.4f (%.2fx); within-input pairs %.4f", fin.diversity.score,
             fin.diversity_baseline, fin.diversity.score / fin.diversity_baseline, fin.diversity.per_input));
  report("5c", fin.probe.max_abs_rho >= 0.6, fmt("hue control max |rho| %.3f", fin.probe.max_abs_rho));
  report("5d", fin.probe.median_iou >= 0.6, fmt("shape preservation median IoU %.3f", fin.probe.median_iou));
  report("5e", fin.fid_lite < early.fid_lite, fmt("fid_lite final %.4f vs step 500 %.4f", fin.fid_lite, early.fid_lite));
  report("5t", run.seconds <= 1800.0, fmt("20k-step run took %.1f min (target 30)", run.seconds / 60.0), false);

  RunConfig ablation = cfg;
  ablation.train.lambda2 = 0.0;
  const Run abl = train(ablation, data, work / "run_lambda2_0");
  const EvalReport abl_eval =
      evaluate_checkpoint(abl.dir / checkpoint_name(ablation.train.steps), heldout, ablation.eval, to_json(ablation));
  report("6", abl_eval.diversity.score < fin.diversity.score,
         fmt("ablation lambda2=0: diversity %.4f vs default %.4f, within-input %.4f vs %.4f (report only)",
             abl_eval.diversity.score, fin.diversity.score, abl_eval.diversity.per_input, fin.diversity.per_input),
         false);
}

bool same_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& names, std::string& mismatch) {
  for (const auto& f : names) {
    if (!fs::exists(a / f) || slurp(a / f) != slurp(b / f)) {
      mismatch = f;
      return false;
    }
  }
  return true;
}

void criterion_determinism(const fs::path& work, const Dataset& data, const Dataset& heldout) {
  RunConfig cfg = parse_run_config(kRunConfig);
  cfg.train.steps = 200;
  cfg.checkpoint_every = 100;
  cfg.sample_every = 100;
  const std::string cfg_json = to_json(cfg);
  std::vector<std::string> files{"metrics.csv", checkpoint_name(100), checkpoint_name(200), "eval_report.json"};
  auto full = [&](const fs::path& dir) {
    train(cfg, data, dir);
    const EvalReport r = evaluate(load_networks(dir / checkpoint_name(200)), heldout, cfg.eval);
    std::ofstream(dir / "eval_report.json", std::ios::binary) << report_json(r, cfg_json, checkpoint_name(200));
  };
  full(work / "det_a");
  full(work / "det_b");
  std::string bad;
  const bool repeat = same_files(work / "det_a", work / "det_b", files, bad);

  RunConfig half = cfg;
  half.train.steps = 100;
  // The config echo must match the uninterrupted run, so both halves store `cfg`.
  TrainOptions o;
  o.out_dir = work / "det_resume";
  o.checkpoint_every = cfg.checkpoint_every;
  o.sample_every = cfg.sample_every;
  o.config_json = cfg_json;
  fs::create_directories(o.out_dir);
  run_training(half.train, data, o);
  o.resume_from = o.out_dir / checkpoint_name(100);
  run_training(cfg.train, data, o);
  std::string bad_resume;
  const bool resume = same_files(work / "det_a", work / "det_resume",
                                 {"metrics.csv", checkpoint_name(100), checkpoint_name(200)}, bad_resume);
  report("7", repeat && resume,
         fmt("determinism: repeat run %s, resume at 100/200 %s", repeat ? "identical" : ("differs in " + bad).c_str(),
             resume ? "identical" : ("differs in " + bad_resume).c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  const bool no_training = argc > 2 && std::string(argv[2]) == "--no-training";
  fs::remove_all(work);
  fs::create_directories(work);

  criterion_grad_check();
  criterion_kl();
  criterion_mmd();
  criterion_frechet();

  generate_dataset(work / "data", 4000, 1);
  generate_dataset(work / "heldout", 2000, 2);
  const Dataset data = load_dataset(work / "data");
  const Dataset heldout = load_dataset(work / "heldout");
  criterion_determinism(work, data, heldout);
  if (no_training) {
    std::printf("[SKIP] 5, 6 end-to-end run\n");
  } else {
    criteria_end_to_end(work, data, heldout);
  }

  std::printf("%s\n", failures == 0 ? "all gated criteria passed" : fmt("%d gated criteria failed", failures).c_str());
  return failures == 0 ? 0 : 1;
}
