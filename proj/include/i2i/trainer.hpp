#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "i2i/networks.hpp"
#include "i2i/objective.hpp"
#include "i2i/rng.hpp"
#include "i2i/synth.hpp"

namespace i2i {

struct AdamHyper {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamHyper adam_hyper(const TrainConfig& cfg);

struct OptimizerState {
  AdamHyper hyper;
  std::vector<NamedTensor> params;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(std::vector<NamedTensor> params, AdamHyper hyper);
/// Bias-corrected Adam step on every parameter; absent gradients count as zero.
void adam_update(OptimizerState& state, const Gradients& grads);

struct Optimizers {
  OptimizerState disc;
  OptimizerState gen;
};

Optimizers make_optimizers(const Networks& nets, const TrainConfig& cfg);

/// Source-domain cycle. Prior codes come from `v_rng`, reparametrisation noise
/// from `eps_rng`.
CycleOutputs forward_cycle(const Networks& nets, Domain source, const Tensor& batch, Rng& v_rng, Rng& eps_rng);
inline CycleOutputs forward_cycle_x(const Networks& nets, const Tensor& x, Rng& v_rng, Rng& eps_rng) {
  return forward_cycle(nets, Domain::x, x, v_rng, eps_rng);
}
inline CycleOutputs forward_cycle_y(const Networks& nets, const Tensor& y, Rng& v_rng, Rng& eps_rng) {
  return forward_cycle(nets, Domain::y, y, v_rng, eps_rng);
}

struct StepMetrics {
  std::uint64_t step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  std::array<double, 2> gan_d{};
  std::array<double, 2> gan_g{};
  std::array<double, 2> recon{};
  std::array<double, 2> vae{};
  std::array<double, 2> bound{};
  double seconds = 0.0;
};

/// One step: discriminators on detached fakes, then encoders and generators
/// with the discriminators frozen. All noise is derived from (cfg.seed, step).
/// Throws NumericError naming the first non-finite term.
StepMetrics train_step(Networks& nets, Optimizers& opt, const Tensor& x, const Tensor& y, const TrainConfig& cfg,
                       std::uint64_t step);

/// Seeded epoch-shuffled batch indices for a 1-based step.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::string_view stream, std::size_t dataset_size,
                                       std::size_t batch_size, std::uint64_t step);

/// `config_json`, when given, is stored verbatim in the header for reports.
void save_checkpoint(const std::filesystem::path& path, const Networks& nets, const Optimizers& opt,
                     std::uint64_t step, std::uint64_t seed, const std::string& config_json = {});

struct CheckpointInfo {
  ArchConfig arch;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_json;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
/// Restores parameters and optimizer moments in place and returns the step.
/// Throws FingerprintError when the file was written for another architecture.
std::uint64_t load_checkpoint(const std::filesystem::path& path, Networks& nets, Optimizers& opt);
/// Parameters only, for evaluation and translation.
Networks load_networks(const std::filesystem::path& path, const ArchConfig& arch);
/// As above with the architecture taken from the checkpoint itself.
Networks load_networks(const std::filesystem::path& path);
std::string checkpoint_name(std::uint64_t step);

inline constexpr std::string_view kMetricsHeader = "step,loss_d,loss_g,recon1,recon2,vae1,vae2,bound1,bound2,seconds";
std::string metrics_row(const StepMetrics& m);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 1000;
  std::size_t sample_every = 500;
  /// Wall time in the metrics `seconds` column; off keeps metrics.csv
  /// reproducible byte for byte (timing.csv always records it).
  bool log_wall_time = false;
  std::optional<std::filesystem::path> resume_from;
  /// Resolved run configuration, copied into every checkpoint header.
  std::string config_json;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::uint64_t final_step = 0;
  std::vector<StepMetrics> metrics;
};

TrainResult run_training(const TrainConfig& cfg, const Dataset& data, const TrainOptions& options);

}  // namespace i2i
