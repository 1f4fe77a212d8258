#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/trainer.hpp"

namespace fs = std::filesystem;

namespace i2i {
namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("i2i_trainer_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 32x32 images with very few channels: each step takes milliseconds.
TrainConfig small_config() {
  TrainConfig cfg;
  cfg.arch.code_channels = 3;
  cfg.arch.code_dim = 2;
  cfg.arch.base_filters = 2;
  cfg.arch.encoder_res_blocks = 1;
  cfg.arch.generator_res_blocks = 1;
  cfg.arch.specific_downsamples = 1;
  cfg.arch.disc_downsamples = 2;
  cfg.batch_size = 2;
  cfg.seed = 3;
  return cfg;
}

const fs::path& shared_data() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data");
    generate_dataset(d, 12, 21);
    return d;
  }();
  return dir;
}

std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p({3}, {0.5, -1.0, 2.0}, true);
  OptimizerState s = make_optimizer({{"p", p}}, AdamHyper{});
  adam_update(s, Gradients{});
  EXPECT_EQ(p.at(0), 0.5);
  EXPECT_EQ(p.at(1), -1.0);
  EXPECT_EQ(p.at(2), 2.0);
  EXPECT_EQ(s.step, 1u);
}

// After bias correction the first step is -lr * g / (|g| + eps).
TEST(Adam, FirstStepClosedForm) {
  Tensor w({3}, {1.0, 1.0, 1.0}, true);
  const AdamHyper h{0.01, 0.5, 0.999, 1e-8};
  OptimizerState s = make_optimizer({{"w", w}}, h);
  const std::vector<double> g{0.3, -2.0, 1e-3};
  Tensor r = sum(mul(w, Tensor::vector(g)));
  adam_update(s, backward(r));
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = 1.0 - h.learning_rate * g[i] / (std::abs(g[i]) + h.eps);
    EXPECT_NEAR(w.at(i), expected, 1e-15);
    EXPECT_LE(std::abs(w.at(i) - 1.0), h.learning_rate * (1 + 1e-12));
  }
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
  Tensor w = Tensor::scalar(0.0, true);
  OptimizerState s = make_optimizer({{"w", w}}, AdamHyper{});
  double prev = w.item();
  for (int i = 0; i < 200; ++i) {
    adam_update(s, backward(scale(w, 1.5)));
    EXPECT_LT(w.item(), prev);
    prev = w.item();
  }
}

TEST(ForwardCycle, ShapeContract) {
  const TrainConfig cfg = small_config();
  const Networks nets = init_params(cfg.arch, 1);
  const Dataset data = load_dataset(shared_data());
  const std::vector<std::size_t> idx{0, 1};
  Rng v = make_stream(1, "v"), e = make_stream(1, "e");
  const CycleOutputs cx = forward_cycle_x(nets, stack_images(data.x, idx), v, e);
  EXPECT_EQ(cx.c.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(cx.q_source.mu.shape(), (Shape{2, 2}));
  EXPECT_EQ(cx.prior_v.shape(), (Shape{2, 2}));
  EXPECT_EQ(cx.translated.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(cx.c_hat.shape(), cx.c.shape());
  EXPECT_EQ(cx.q_hat.log_var.shape(), (Shape{2, 2}));
  EXPECT_EQ(cx.v_sample.shape(), (Shape{2, 2}));
  EXPECT_EQ(cx.recon.shape(), (Shape{2, 1, 32, 32}));
  const CycleOutputs cy = forward_cycle_y(nets, stack_images(data.y, idx), v, e);
  EXPECT_EQ(cy.translated.shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(cy.recon.shape(), (Shape{2, 3, 32, 32}));
}

TEST(ForwardCycle, DeterministicGivenStreams) {
  const TrainConfig cfg = small_config();
  const Networks nets = init_params(cfg.arch, 1);
  const Dataset data = load_dataset(shared_data());
  const std::vector<std::size_t> idx{2, 3};
  auto run = [&] {
    Rng v = make_stream(9, "v"), e = make_stream(9, "e");
    return forward_cycle_y(nets, stack_images(data.y, idx), v, e);
  };
  const CycleOutputs a = run(), b = run();
  for (auto [ta, tb] : {std::pair{a.recon, b.recon}, std::pair{a.translated, b.translated},
                        std::pair{a.q_hat.mu, b.q_hat.mu}, std::pair{a.v_sample, b.v_sample}}) {
    ASSERT_EQ(ta.numel(), tb.numel());
    EXPECT_EQ(std::memcmp(ta.values().data(), tb.values().data(), ta.numel() * sizeof(double)), 0);
  }
}

TEST(ForwardCycle, BothCyclesShareParameterObjects) {
  const Networks nets = init_params(small_config().arch, 1);
  Rng v = make_stream(1, "v"), e = make_stream(1, "e");
  const Dataset data = load_dataset(shared_data());
  const std::vector<std::size_t> idx{0, 1};
  const CycleOutputs cx = forward_cycle_x(nets, stack_images(data.x, idx), v, e);
  const CycleOutputs cy = forward_cycle_y(nets, stack_images(data.y, idx), v, e);
  // Every generator-side leaf is reached from both cycles' reconstructions.
  const Gradients gx = backward(sum(cx.recon)), gy = backward(sum(cy.recon));
  for (const auto& p : nets.generator_side()) {
    if (p.name.rfind("enc_xd", 0) == 0 || p.name.rfind("enc_yd", 0) == 0) continue;
    EXPECT_TRUE(gx.contains(p.tensor) && gy.contains(p.tensor)) << p.name;
  }
}

struct StepFixture {
  TrainConfig cfg = small_config();
  Dataset data = load_dataset(shared_data());
  Networks nets = init_params(cfg.arch, cfg.seed);
  Optimizers opt = make_optimizers(nets, cfg);
  Tensor x, y;
  StepFixture() {
    const auto ix = batch_indices(cfg.seed, "data-x", data.x.size(), cfg.batch_size, 1);
    const auto iy = batch_indices(cfg.seed, "data-y", data.y.size(), cfg.batch_size, 1);
    x = stack_images(data.x, ix);
    y = stack_images(data.y, iy);
  }
};

TEST(TrainStep, MetricsFiniteAndBookkept) {
  StepFixture f;
  f.cfg.alpha[0] = {0.7, 1.3, 0.9, 2.0};
  f.cfg.alpha[1] = {1.1, 0.4, 1.6, 0.5};
  const StepMetrics m = train_step(f.nets, f.opt, f.x, f.y, f.cfg, 1);
  double expected_g = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    for (double v : {m.gan_d[i], m.gan_g[i], m.recon[i], m.vae[i], m.bound[i]}) EXPECT_TRUE(std::isfinite(v));
    const CycleWeights& a = f.cfg.alpha[i];
    expected_g += a.alpha1 * m.bound[i] + a.alpha2 * m.recon[i] + a.alpha3 * m.gan_g[i] + a.alpha4 * m.vae[i];
  }
  EXPECT_NEAR(m.loss_g, expected_g, 1e-9);
  EXPECT_NEAR(m.loss_d, m.gan_d[0] + m.gan_d[1], 1e-9);
  EXPECT_EQ(f.opt.disc.step, 1u);
  EXPECT_EQ(f.opt.gen.step, 1u);
}

// With the generator optimizer stalled, only the discriminator phase moves
// anything: generator-side parameters stay bit-identical, and vice versa.
TEST(TrainStep, PhasesTouchOnlyTheirOwnParameters) {
  {
    StepFixture f;
    f.opt.gen.hyper.learning_rate = 0.0;
    const auto gen_before = snapshot(f.nets.generator_side());
    const auto disc_before = snapshot(f.nets.discriminator_side());
    train_step(f.nets, f.opt, f.x, f.y, f.cfg, 1);
    EXPECT_EQ(snapshot(f.nets.generator_side()), gen_before);
    EXPECT_NE(snapshot(f.nets.discriminator_side()), disc_before);
  }
  {
    StepFixture f;
    f.opt.disc.hyper.learning_rate = 0.0;
    const auto gen_before = snapshot(f.nets.generator_side());
    const auto disc_before = snapshot(f.nets.discriminator_side());
    train_step(f.nets, f.opt, f.x, f.y, f.cfg, 1);
    EXPECT_EQ(snapshot(f.nets.discriminator_side()), disc_before);
    EXPECT_NE(snapshot(f.nets.generator_side()), gen_before);
  }
}

TEST(TrainStep, DiscriminatorsUnfrozenAfterwards) {
  StepFixture f;
  train_step(f.nets, f.opt, f.x, f.y, f.cfg, 1);
  for (const auto& p : f.nets.all()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(TrainStep, NonFiniteLossNamesTerm) {
  StepFixture f;
  f.x.mutable_values()[0] = NAN;
  try {
    train_step(f.nets, f.opt, f.x, f.y, f.cfg, 7);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 7);
    EXPECT_FALSE(e.term().empty());
  }
}

TEST(TrainStep, RejectsSingletonBatch) {
  StepFixture f;
  const std::vector<std::size_t> one{0};
  EXPECT_THROW(train_step(f.nets, f.opt, stack_images(f.data.x, one), f.y, f.cfg, 1), ShapeError);
}

TEST(BatchIndices, EpochPermutations) {
  // Steps 1..3 with batch 4 cover one epoch of 12 exactly once.
  std::multiset<std::size_t> seen;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    for (auto i : batch_indices(1, "data-x", 12, 4, s)) seen.insert(i);
  }
  EXPECT_EQ(seen.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(seen.count(i), 1u);
  EXPECT_EQ(batch_indices(1, "data-x", 12, 4, 2), batch_indices(1, "data-x", 12, 4, 2));
  EXPECT_NE(batch_indices(1, "data-x", 12, 4, 1), batch_indices(1, "data-y", 12, 4, 1));
  EXPECT_THROW(batch_indices(1, "data-x", 0, 4, 1), InsufficientDataError);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  StepFixture f;
  train_step(f.nets, f.opt, f.x, f.y, f.cfg, 1);
  const fs::path dir = scratch("roundtrip");
  save_checkpoint(dir / "c.bin", f.nets, f.opt, 1, f.cfg.seed, "{\"k\":1}");

  Networks nets = init_params(f.cfg.arch, 99);
  Optimizers opt = make_optimizers(nets, f.cfg);
  EXPECT_EQ(load_checkpoint(dir / "c.bin", nets, opt), 1u);
  EXPECT_EQ(snapshot(nets.all()), snapshot(f.nets.all()));
  EXPECT_EQ(opt.disc.m, f.opt.disc.m);
  EXPECT_EQ(opt.gen.v, f.opt.gen.v);
  EXPECT_EQ(opt.gen.step, f.opt.gen.step);
  const CheckpointInfo info = read_checkpoint_info(dir / "c.bin");
  EXPECT_EQ(info.arch, f.cfg.arch);
  EXPECT_EQ(info.step, 1u);
  EXPECT_EQ(info.config_json, "{\"k\":1}");
  EXPECT_EQ(snapshot(load_networks(dir / "c.bin").all()), snapshot(f.nets.all()));
}

TEST(Checkpoint, WrongArchitectureIsRejected) {
  StepFixture f;
  const fs::path dir = scratch("fingerprint");
  save_checkpoint(dir / "c.bin", f.nets, f.opt, 0, f.cfg.seed);
  ArchConfig other = f.cfg.arch;
  other.code_dim = 3;
  Networks nets = init_params(other, 0);
  Optimizers opt = make_optimizers(nets, f.cfg);
  EXPECT_THROW(load_checkpoint(dir / "c.bin", nets, opt), FingerprintError);
  EXPECT_THROW(load_networks(dir / "c.bin", other), FingerprintError);
  EXPECT_THROW(read_checkpoint_info(dir / "missing.bin"), IoError);
}

TrainOptions options_for(const fs::path& dir) {
  TrainOptions o;
  o.out_dir = dir;
  o.checkpoint_every = 50;
  o.sample_every = 50;
  o.config_json = "{}";
  return o;
}

TEST(RunTraining, MetricsRowCount) {
  TrainConfig cfg = small_config();
  cfg.steps = 10;
  const fs::path dir = scratch("rows");
  run_training(cfg, load_dataset(shared_data()), options_for(dir));
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricsHeader);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 10);
  EXPECT_TRUE(fs::exists(dir / checkpoint_name(10)));
}

TEST(RunTraining, IdenticalRunsAreByteIdentical) {
  TrainConfig cfg = small_config();
  cfg.steps = 20;
  const Dataset data = load_dataset(shared_data());
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run_training(cfg, data, options_for(a));
  run_training(cfg, data, options_for(b));
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / checkpoint_name(20)), slurp(b / checkpoint_name(20)));
}

// 100 uninterrupted steps against 50, checkpoint, then 50 more.
TEST(RunTraining, ResumeReproducesUninterruptedRun) {
  TrainConfig cfg = small_config();
  cfg.steps = 100;
  const Dataset data = load_dataset(shared_data());
  const fs::path full = scratch("resume_full"), split = scratch("resume_split");
  run_training(cfg, data, options_for(full));

  TrainConfig first = cfg;
  first.steps = 50;
  run_training(first, data, options_for(split));
  TrainOptions resume = options_for(split);
  resume.resume_from = split / checkpoint_name(50);
  const TrainResult r = run_training(cfg, data, resume);
  EXPECT_EQ(r.final_step, 100u);
  EXPECT_EQ(r.metrics.front().step, 51u);
  EXPECT_EQ(slurp(full / "metrics.csv"), slurp(split / "metrics.csv"));
  EXPECT_EQ(slurp(full / checkpoint_name(100)), slurp(split / checkpoint_name(100)));
}

TEST(RunTraining, ResumeWithOtherArchitectureFails) {
  TrainConfig cfg = small_config();
  cfg.steps = 2;
  const Dataset data = load_dataset(shared_data());
  const fs::path dir = scratch("resume_arch");
  run_training(cfg, data, options_for(dir));
  TrainConfig other = cfg;
  other.steps = 4;
  other.arch.code_dim = 3;
  TrainOptions o = options_for(dir);
  o.resume_from = dir / checkpoint_name(2);
  EXPECT_THROW(run_training(other, data, o), FingerprintError);
}

}  // namespace
}  // namespace i2i
