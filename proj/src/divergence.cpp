#include "i2i/divergence.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"

namespace i2i {

namespace {

void require_finite(std::string_view what, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite entry");
  }
}

// Lexicographic order on (rows, values); used to evaluate the MMD cross term in
// an argument-order independent way.
bool precedes(const Tensor& a, const Tensor& b) {
  if (a.dim(0) != b.dim(0)) return a.dim(0) < b.dim(0);
  auto av = a.values(), bv = b.values();
  return std::lexicographical_compare(av.begin(), av.end(), bv.begin(), bv.end());
}

// Sum over all (i, j) of k(a_i, b_j); optionally records per-pair kernels.
double kernel_sum(const double* a, std::size_t n, const double* b, std::size_t m, std::size_t d, double inv_two_s2,
                  std::vector<double>* store) {
  double total = 0.0;
  if (store) store->resize(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[i * d + k] - b[j * d + k];
        dist2 += diff * diff;
      }
      const double kv = std::exp(-dist2 * inv_two_s2);
      if (store) (*store)[i * m + j] = kv;
      row += kv;
    }
    total += row;
  }
  return total;
}

}  // namespace

void validate(const DiagonalGaussian& g) {
  if (!g.mu.defined() || !g.log_var.defined()) throw ShapeError("gaussian: mu and log_var must be set");
  if (g.mu.shape() != g.log_var.shape()) {
    throw ShapeError("gaussian: mu " + shape_str(g.mu.shape()) + " vs log_var " + shape_str(g.log_var.shape()));
  }
  if (g.mu.rank() != 1 && g.mu.rank() != 2) throw ShapeError("gaussian: expected [dim] or [N, dim]");
  require_finite("gaussian mu", g.mu.values());
  require_finite("gaussian log_var", g.log_var.values());
}

DiagonalGaussian standard_normal(std::size_t dim) { return {Tensor::zeros({dim}), Tensor::zeros({dim})}; }

Tensor reparam_sample(const DiagonalGaussian& g, const Tensor& eps) {
  if (eps.shape() != g.mu.shape()) {
    throw ShapeError("reparam_sample: eps " + shape_str(eps.shape()) + " vs mu " + shape_str(g.mu.shape()));
  }
  return add(g.mu, mul(exp(scale(g.log_var, 0.5)), eps));
}

Tensor kl_to_standard_normal(const DiagonalGaussian& g) {
  validate(g);
  Tensor quad = add(sum(square(g.mu)), sum(exp(g.log_var)));
  Tensor inner = sub(quad, sum(g.log_var));
  return add_scalar(scale(inner, 0.5), -0.5 * static_cast<double>(g.mu.numel()));
}

MonteCarloEstimate kl_mc_estimate(const DiagonalGaussian& g, std::size_t n, std::uint64_t seed) {
  validate(g);
  if (n < 100) throw std::invalid_argument("kl_mc_estimate: need at least 100 samples");
  Rng rng = make_stream(seed, "kl-mc");
  std::normal_distribution<double> normal;
  auto mu = g.mu.values();
  auto lv = g.log_var.values();
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    // log q(z) - log r(z) with the 2*pi terms cancelled.
    double term = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double eps = normal(rng);
      const double z = mu[k] + std::exp(0.5 * lv[k]) * eps;
      term += -0.5 * lv[k] - 0.5 * eps * eps + 0.5 * z * z;
    }
    const double delta = term - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (term - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

double gaussian_kernel(std::span<const double> z, std::span<const double> z_prime, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_kernel: bandwidth must be positive");
  if (z.size() != z_prime.size()) throw ShapeError("gaussian_kernel: vectors differ in length");
  double dist2 = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) dist2 += (z[k] - z_prime[k]) * (z[k] - z_prime[k]);
  return std::exp(-dist2 / (2.0 * sigma * sigma));
}

double default_mmd_bandwidth(std::size_t code_dim) { return 2.0 / static_cast<double>(code_dim); }

Tensor mmd(const Tensor& samples_p, const Tensor& samples_q, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("mmd: bandwidth must be positive");
  if (samples_p.rank() != 2 || samples_q.rank() != 2 || samples_p.dim(1) != samples_q.dim(1)) {
    throw ShapeError("mmd: sample sets " + shape_str(samples_p.shape()) + " and " + shape_str(samples_q.shape()) +
                     " are not [n, d] / [m, d] with equal d");
  }
  const bool swap = precedes(samples_q, samples_p);
  const Tensor& a = swap ? samples_q : samples_p;
  const Tensor& b = swap ? samples_p : samples_q;
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  const double inv_two_s2 = 1.0 / (2.0 * sigma * sigma);
  const bool grad = (a.requires_grad() || b.requires_grad()) && grad_recording_enabled();

  auto kaa = std::make_shared<std::vector<double>>();
  auto kbb = std::make_shared<std::vector<double>>();
  auto kab = std::make_shared<std::vector<double>>();
  const double saa = kernel_sum(a.values().data(), n, a.values().data(), n, d, inv_two_s2, grad ? kaa.get() : nullptr);
  const double sbb = kernel_sum(b.values().data(), m, b.values().data(), m, d, inv_two_s2, grad ? kbb.get() : nullptr);
  const double sab = kernel_sum(a.values().data(), n, b.values().data(), m, d, inv_two_s2, grad ? kab.get() : nullptr);
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double value = saa / (nn * nn) + sbb / (mm * mm) - 2.0 * (sab / (nn * mm));

  // Inputs are recorded in the canonical (a, b) order; map gradients back.
  const std::size_t ia = swap ? 1 : 0, ib = swap ? 0 : 1;
  return record("mmd", {1}, {value}, {samples_p, samples_q}, [=](const BackwardContext& ctx) {
    const double g = ctx.grad_out[0];
    const double inv_s2 = 2.0 * inv_two_s2;
    const double* av = a.values().data();
    const double* bv = b.values().data();
    if (double* ga = ctx.grad_in[ia]) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double c = g * 2.0 / (nn * nn) * (*kaa)[i * n + j] * inv_s2;
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] -= c * (av[i * d + k] - av[j * d + k]);
        }
        for (std::size_t j = 0; j < m; ++j) {
          const double c = g * 2.0 / (nn * mm) * (*kab)[i * m + j] * inv_s2;
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += c * (av[i * d + k] - bv[j * d + k]);
        }
      }
    }
    if (double* gb = ctx.grad_in[ib]) {
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
          const double c = g * 2.0 / (mm * mm) * (*kbb)[j * m + i] * inv_s2;
          for (std::size_t k = 0; k < d; ++k) gb[j * d + k] -= c * (bv[j * d + k] - bv[i * d + k]);
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double c = g * 2.0 / (nn * mm) * (*kab)[i * m + j] * inv_s2;
          for (std::size_t k = 0; k < d; ++k) gb[j * d + k] += c * (bv[j * d + k] - av[i * d + k]);
        }
      }
    }
  });
}

void validate(const GaussianStats& stats) {
  const auto d = stats.mean.size();
  if (stats.covariance.rows() != d || stats.covariance.cols() != d) {
    throw ShapeError("gaussian stats: covariance is not " + std::to_string(d) + "x" + std::to_string(d));
  }
  if ((stats.covariance - stats.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw DomainError("gaussian stats: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(stats.covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-9) {
    std::ostringstream msg;
    msg << "gaussian stats: covariance has negative eigenvalue " << eig.eigenvalues().minCoeff();
    throw DomainError(msg.str());
  }
}

GaussianStats fit_gaussian_stats(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows(), d = samples.cols();
  if (d == 0 || n < d + 1) {
    throw InsufficientDataError("fit_gaussian_stats: need at least " + std::to_string(d + 1) + " samples, got " +
                                std::to_string(n));
  }
  GaussianStats out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ShapeError("frechet_distance: dimensions " + std::to_string(a.mean.size()) + " and " +
                     std::to_string(b.mean.size()) + " differ");
  }
  validate(a);
  validate(b);
  // tr (S_a S_b)^{1/2} = tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}, a symmetric PSD form.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.covariance);
  Eigen::VectorXd root_vals = ea.eigenvalues();
  for (Eigen::Index i = 0; i < root_vals.size(); ++i) root_vals[i] = std::sqrt(std::max(0.0, root_vals[i]));
  const Eigen::MatrixXd root_a = ea.eigenvectors() * root_vals.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd sym = root_a * b.covariance * root_a;
  sym = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  double trace_root = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double lambda = es.eigenvalues()[i];
    if (lambda < -1e-9) {
      std::ostringstream msg;
      msg << "frechet_distance: matrix square root failed, eigenvalue " << lambda;
      throw DomainError(msg.str());
    }
    trace_root += std::sqrt(std::max(0.0, lambda));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double dist = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_root;
  return std::max(0.0, dist);
}

}  // namespace i2i
