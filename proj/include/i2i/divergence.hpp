#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>

#include "i2i/tensor.hpp"

namespace i2i {

/// Diagonal Gaussian posterior q(v|x). `mu` and `log_var` are [dim] or a batch
/// [N, dim]; a batch is treated as a product of independent posteriors.
struct DiagonalGaussian {
  Tensor mu;
  Tensor log_var;

  std::size_t dim() const { return mu.shape().back(); }
  std::size_t batch() const { return mu.rank() == 2 ? mu.dim(0) : 1; }
};

/// Throws ShapeError / DomainError when mu and log_var disagree or hold NaN/Inf.
void validate(const DiagonalGaussian& g);

/// The fixed spherical marginal N(0, I) of the given dimension.
DiagonalGaussian standard_normal(std::size_t dim);

/// mu + exp(0.5 * log_var) * eps, differentiable in mu and log_var.
Tensor reparam_sample(const DiagonalGaussian& g, const Tensor& eps);

/// KL[g || N(0, I)] in closed form, summed over every entry of the batch.
Tensor kl_to_standard_normal(const DiagonalGaussian& g);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// Sample mean of log q(z) - log r(z) over z ~ q. Requires n >= 100.
MonteCarloEstimate kl_mc_estimate(const DiagonalGaussian& g, std::size_t n, std::uint64_t seed);

/// exp(-||z - z'||^2 / (2 sigma^2)).
double gaussian_kernel(std::span<const double> z, std::span<const double> z_prime, double sigma);

/// Kernel bandwidth 2 / dim.
double default_mmd_bandwidth(std::size_t code_dim);

/// Biased (V-statistic) squared MMD between the rows of two [n, d] / [m, d]
/// sample matrices. Symmetric in its arguments bit for bit.
Tensor mmd(const Tensor& samples_p, const Tensor& samples_q, double sigma);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Checks symmetry (1e-9) and positive semi-definiteness (eigenvalues >= -1e-9).
void validate(const GaussianStats& stats);

/// Sample mean and unbiased, symmetrised covariance of the rows. Needs n >= d + 1.
GaussianStats fit_gaussian_stats(const Eigen::MatrixXd& samples);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

}  // namespace i2i
