#include "i2i/objective.hpp"

#include <string>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"

namespace i2i {

namespace {

constexpr double kLogitClamp = 30.0;

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
}

void require_defined(std::string_view field, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("cycle outputs: missing field " + std::string(field));
}

// Accumulates weight * term into a running sum, skipping undefined terms.
void accumulate(Tensor& total, const Tensor& term, double weight) {
  if (!term.defined()) return;
  Tensor scaled = scale(term, weight);
  total = total.defined() ? add(total, scaled) : scaled;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train: " + what); };
  for (double w : {lambda1, lambda2, lambda3}) {
    if (!(w >= 0.0)) fail("lambda weights must be >= 0");
  }
  for (const auto& a : alpha) {
    for (double w : {a.alpha1, a.alpha2, a.alpha3, a.alpha4}) {
      if (!(w >= 0.0)) fail("alpha weights must be >= 0");
    }
  }
  if (mmd_sigma < 0.0) fail("mmd_sigma must be >= 0 (0 selects 2/dim)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam decays must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (batch_size < 2) fail("batch_size must be >= 2");
  arch.validate();
}

Tensor gan_loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits) {
  require_same_shape("gan_loss_discriminator", real_logits, fake_logits);
  Tensor real_term = mean(softplus(scale(clamp(real_logits, -kLogitClamp, kLogitClamp), -1.0)));
  Tensor fake_term = mean(softplus(clamp(fake_logits, -kLogitClamp, kLogitClamp)));
  return add(real_term, fake_term);
}

Tensor gan_loss_generator(const Tensor& fake_logits) {
  return mean(softplus(scale(clamp(fake_logits, -kLogitClamp, kLogitClamp), -1.0)));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  return mean(square(sub(a, b)));
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape("mean_abs_diff", a, b);
  return mean(abs(sub(a, b)));
}

Tensor cycle_reconstruction_loss(const CycleOutputs& out, const TrainConfig& cfg) {
  require_defined("input", out.input);
  require_defined("recon", out.recon);
  require_defined("q_hat.mu", out.q_hat.mu);
  require_defined("prior_v", out.prior_v);
  require_defined("c", out.c);
  require_defined("c_hat", out.c_hat);
  Tensor total;
  accumulate(total, mse(out.recon, out.input), cfg.lambda1);
  accumulate(total, mse(out.q_hat.mu, out.prior_v), cfg.lambda2);
  accumulate(total, mse(out.c_hat, out.c), cfg.lambda3);
  return total;
}

Tensor vae_loss(const Tensor& v_samples, const Tensor& prior_samples, const Tensor& x, const Tensor& x_hat,
                double sigma) {
  if (v_samples.rank() != 2 || v_samples.dim(0) < 2 || prior_samples.rank() != 2 || prior_samples.dim(0) < 2) {
    throw ShapeError("vae_loss: MMD needs at least 2 samples per side, got " + shape_str(v_samples.shape()) + " and " +
                     shape_str(prior_samples.shape()));
  }
  return add(mmd(v_samples, prior_samples, sigma), mean_abs_diff(x_hat, x));
}

Tensor info_bound_loss(const DiagonalGaussian& vhat_posteriors) {
  validate(vhat_posteriors);
  return scale(kl_to_standard_normal(vhat_posteriors), 1.0 / static_cast<double>(vhat_posteriors.batch()));
}

Objectives total_loss(const std::array<CycleTerms, 2>& terms, const TrainConfig& cfg) {
  Objectives out;
  for (std::size_t i = 0; i < 2; ++i) {
    const CycleTerms& t = terms[i];
    const CycleWeights& a = cfg.alpha[i];
    accumulate(out.discriminator, t.gan_d, 1.0);
    accumulate(out.generator, t.bound, a.alpha1);
    accumulate(out.generator, t.recon, a.alpha2);
    accumulate(out.generator, t.gan_g, a.alpha3);
    accumulate(out.generator, t.vae, a.alpha4);
  }
  if (!out.discriminator.defined()) out.discriminator = Tensor::scalar(0.0);
  if (!out.generator.defined()) out.generator = Tensor::scalar(0.0);
  return out;
}

}  // namespace i2i
