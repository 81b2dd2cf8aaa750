#pragma once

#include <cstdint>
#include <vector>

#include "dsu/rng.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// Gaussian with diagonal covariance, the distribution object for the
/// closed-form Wasserstein computations.
struct DiagGaussian {
  std::vector<double> mean;      // [d]
  std::vector<double> variance;  // [d], >= 0
};

/// 2-Wasserstein distance between diagonal Gaussians:
/// W^2 = ||mu1 - mu2||^2 + sum_i (sqrt(v1_i) - sqrt(v2_i))^2.
double gaussian_w2_diag(const DiagGaussian& g1, const DiagGaussian& g2);

/// Full-covariance 2-Wasserstein distance,
/// W^2 = ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2}),
/// for symmetric PSD matrices up to 64x64. Inputs are symmetrized and
/// eigenvalues clamped at zero; matrices non-PSD beyond tolerance are
/// rejected.
double gaussian_w2_full(const std::vector<double>& mu1, const Tensor& s1,
                        const std::vector<double>& mu2, const Tensor& s2);

/// 1-Wasserstein distance between 1-D Gaussians, E|delta + tau Z| with
/// delta the mean gap and tau the |sd gap|.
double gaussian_w1_1d(double mean1, double sd1, double mean2, double sd2);

/// Sliced W1 between two diagonal Gaussians: the 1-D closed form averaged
/// over random unit directions. Oracle for the empirical estimator below.
double gaussian_sliced_w1(const DiagGaussian& g1, const DiagGaussian& g2,
                          int64_t n_directions, RngStream& rng);

/// Empirical sliced 1-Wasserstein distance between two sample sets, given
/// as [Na,d] and [Nb,d] tensors: average over random unit directions of the
/// exact 1-D W1 between the projected empirical distributions (supports of
/// unequal size handled by the merged-quantile integral).
double empirical_domain_distance(const Tensor& feats_a, const Tensor& feats_b,
                                 int64_t n_projections, RngStream& rng);

/// One linear-regression problem for the implicit-regularization check:
/// f(x) = <w, x> + b on inputs of C channels by N positions, with
/// per-channel statistic spreads (sigma_mu_scope, sigma_sigma_scope) that
/// the stochastic statistic replacement samples within.
struct RegressionInstance {
  Tensor w;                             // [C,N]
  double b = 0.0;
  Tensor x;                             // [n,C,N]
  std::vector<double> y;                // [n]
  std::vector<double> sigma_mu_scope;     // [C], >= 0
  std::vector<double> sigma_sigma_scope;  // [C], >= 0
};

struct ImplicitRegParts {
  double total = 0.0;
  double empirical = 0.0;
  double mu_term = 0.0;
  double sigma_term = 0.0;
};

/// Expected squared-error risk under per-channel statistic perturbation, in
/// closed form: empirical risk plus a mean penalty and a deviation penalty.
/// With row sums s_c = sum_t w[c,t] and unit deviation directions
/// z[j,c,:] = (x[j,c,:] - mean) / ||x[j,c,:] - mean||,
///   mu_term    = sum_c scope_mu[c]^2 * s_c^2
///   sigma_term = (1/n) sum_j sum_c scope_sigma[c]^2 * <w[c], z[j,c]>^2.
/// The mean penalty uses the squared row sum (not the squared row norm):
/// one noise value per channel is added to every position of that channel,
/// so its coefficient in f is the row sum of w. Verified against
/// implicit_reg_monte_carlo, which applies the transform literally.
ImplicitRegParts implicit_reg_closed_form(const RegressionInstance& inst);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int64_t draws = 0;
};

/// Monte-Carlo oracle for the closed form: draw per-channel standard-normal
/// (eps_mu, eps_sigma), rebuild each sample as
/// (sigma + eps_sigma*scope_sigma) z + (mu + eps_mu*scope_mu) 1, and average
/// the squared errors of f on the rebuilt samples.
McEstimate implicit_reg_monte_carlo(const RegressionInstance& inst,
                                    RngStream& rng, int64_t n_draws);

}  // namespace dsu
