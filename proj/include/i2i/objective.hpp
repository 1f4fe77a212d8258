#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "i2i/divergence.hpp"
#include "i2i/networks.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

/// Per-cycle weights of the overall objective: bound, reconstruction, GAN, VAE.
struct CycleWeights {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double alpha3 = 1.0;
  double alpha4 = 1.0;

  bool operator==(const CycleWeights&) const = default;
};

struct TrainConfig {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  std::array<CycleWeights, 2> alpha{};
  /// Kernel bandwidth; 0 selects 2 / code_dim.
  double mmd_sigma = 0.0;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t steps = 20000;
  std::uint64_t seed = 0;
  ArchConfig arch;

  double sigma() const { return mmd_sigma > 0.0 ? mmd_sigma : default_mmd_bandwidth(arch.code_dim); }
  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Everything one translation cycle computes. For the X cycle: c = c1,
/// q_source = q(v_x1|x), prior_v = v_y1, translated = y_g, c_hat = c^1,
/// q_hat = q(v^_y1|y_g), v_sample = v_x1, recon = x^. The Y cycle mirrors it.
struct CycleOutputs {
  Domain source = Domain::x;
  Tensor input;
  Tensor c;
  DiagonalGaussian q_source;
  Tensor prior_v;
  Tensor translated;
  Tensor c_hat;
  DiagonalGaussian q_hat;
  Tensor v_sample;
  Tensor recon;
};

/// -mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake))). The caller detaches
/// `fake` from the generator.
Tensor gan_loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits);
/// Non-saturating form, -mean(log sigmoid(fake)).
Tensor gan_loss_generator(const Tensor& fake_logits);

Tensor mse(const Tensor& a, const Tensor& b);
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);

/// lambda1 * MSE(recon, input) + lambda2 * MSE(mean of q_hat, prior_v) + lambda3 * MSE(c_hat, c).
Tensor cycle_reconstruction_loss(const CycleOutputs& out, const TrainConfig& cfg);
/// MMD between posterior samples and prior samples, plus mean |x - x_hat|.
Tensor vae_loss(const Tensor& v_samples, const Tensor& prior_samples, const Tensor& x, const Tensor& x_hat,
                double sigma);
/// Batch mean of KL[q_n || N(0, I)].
Tensor info_bound_loss(const DiagonalGaussian& vhat_posteriors);

struct CycleTerms {
  Tensor gan_d;
  Tensor gan_g;
  Tensor recon;
  Tensor vae;
  Tensor bound;
};

struct Objectives {
  Tensor discriminator;
  Tensor generator;
};

/// Discriminator objective: sum of the per-cycle discriminator GAN terms.
/// Generator/encoder objective: sum over cycles of
/// alpha1 * bound + alpha2 * recon + alpha3 * gan_g + alpha4 * vae.
/// Undefined terms (e.g. gan_d during the generator phase) are skipped.
Objectives total_loss(const std::array<CycleTerms, 2>& terms, const TrainConfig& cfg);

}  // namespace i2i
