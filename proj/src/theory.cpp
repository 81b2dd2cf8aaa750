#include "dsu/theory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace dsu {

namespace {

void check_dims(size_t a, size_t b, const char* what) {
  if (a != b) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": dimensions " +
                                       std::to_string(a) + " vs " +
                                       std::to_string(b));
  }
}

void check_variances(const std::vector<double>& v) {
  for (double x : v) {
    if (x < 0.0) {
      fail(ErrorCode::DomainViolation, "negative variance in Gaussian");
    }
  }
}

}  // namespace

double gaussian_w2_diag(const DiagGaussian& g1, const DiagGaussian& g2) {
  check_dims(g1.mean.size(), g2.mean.size(), "gaussian_w2_diag");
  check_dims(g1.mean.size(), g1.variance.size(), "gaussian_w2_diag");
  check_dims(g2.mean.size(), g2.variance.size(), "gaussian_w2_diag");
  if (g1.mean.empty()) {
    fail(ErrorCode::EmptyInput, "gaussian_w2_diag: zero-dimensional Gaussian");
  }
  check_variances(g1.variance);
  check_variances(g2.variance);
  double w2 = 0.0;
  for (size_t i = 0; i < g1.mean.size(); ++i) {
    const double dm = g1.mean[i] - g2.mean[i];
    const double ds = std::sqrt(g1.variance[i]) - std::sqrt(g2.variance[i]);
    w2 += dm * dm + ds * ds;
  }
  return std::sqrt(std::max(0.0, w2));
}

namespace {

Eigen::MatrixXd to_matrix(const Tensor& t, const char* name) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1)) {
    fail(ErrorCode::ShapeMismatch, std::string(name) + " must be square, got " +
                                       shape_str(t.shape()));
  }
  const int64_t d = t.dim(0);
  Eigen::MatrixXd m(d, d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = t[i * d + j];
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* name) {
  Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    fail(ErrorCode::DomainViolation,
         std::string(name) + ": eigendecomposition failed");
  }
  Eigen::VectorXd lam = eig.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  if (lam.minCoeff() < -1e-8 * scale) {
    fail(ErrorCode::DomainViolation,
         std::string(name) + " is not positive semi-definite (min eigenvalue " +
             std::to_string(lam.minCoeff()) + ")");
  }
  Eigen::VectorXd root = lam.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

double gaussian_w2_full(const std::vector<double>& mu1, const Tensor& s1,
                        const std::vector<double>& mu2, const Tensor& s2) {
  check_dims(mu1.size(), mu2.size(), "gaussian_w2_full");
  const int64_t d = static_cast<int64_t>(mu1.size());
  if (d < 1) {
    fail(ErrorCode::EmptyInput, "gaussian_w2_full: zero-dimensional Gaussian");
  }
  if (d > 64) {
    fail(ErrorCode::InvalidArgument,
         "gaussian_w2_full supports d <= 64; use the diagonal form");
  }
  Eigen::MatrixXd m1 = to_matrix(s1, "covariance 1");
  Eigen::MatrixXd m2 = to_matrix(s2, "covariance 2");
  if (m1.rows() != d || m2.rows() != d) {
    fail(ErrorCode::ShapeMismatch,
         "covariance size does not match mean dimension " + std::to_string(d));
  }
  // Identical inputs are at distance zero by the metric axioms; the numeric
  // path would leave sqrt(round-off) noise instead.
  if (mu1 == mu2 && (m1.array() == m2.array()).all()) {
    (void)psd_sqrt(m1, "covariance");  // still reject non-PSD input
    return 0.0;
  }
  Eigen::MatrixXd r2 = psd_sqrt(m2, "covariance 2");
  Eigen::MatrixXd inner = psd_sqrt(r2 * (0.5 * (m1 + m1.transpose())) * r2,
                                   "coupling product");
  double w2 = m1.trace() + m2.trace() - 2.0 * inner.trace();
  for (int64_t i = 0; i < d; ++i) {
    const double dm = mu1[i] - mu2[i];
    w2 += dm * dm;
  }
  return std::sqrt(std::max(0.0, w2));
}

double gaussian_w1_1d(double mean1, double sd1, double mean2, double sd2) {
  if (sd1 < 0.0 || sd2 < 0.0) {
    fail(ErrorCode::DomainViolation, "negative standard deviation");
  }
  const double delta = mean1 - mean2;
  const double tau = std::abs(sd1 - sd2);
  if (tau == 0.0) return std::abs(delta);
  // E|delta + tau Z| for Z ~ N(0,1), via the folded-normal mean.
  constexpr double kPi = 3.14159265358979323846;
  const double r = delta / tau;
  const double phi = std::exp(-0.5 * r * r) / std::sqrt(2.0 * kPi);
  const double cdf = 0.5 * std::erfc(-r / std::sqrt(2.0));
  return delta * (2.0 * cdf - 1.0) + 2.0 * tau * phi;
}

namespace {

std::vector<double> random_direction(int64_t d, RngStream& rng) {
  std::vector<double> u(static_cast<size_t>(d));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm < 1e-24);
  norm = std::sqrt(norm);
  for (double& v : u) v /= norm;
  return u;
}

// Exact W1 between two sorted 1-D empirical distributions with uniform
// weights 1/m and 1/n: integral of |quantile difference|, breakpoints kept
// as exact fractions over m*n.
double w1_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  const int64_t m = static_cast<int64_t>(a.size());
  const int64_t n = static_cast<int64_t>(b.size());
  int64_t i = 0, j = 0, cum = 0;
  double w = 0.0;
  const double denom = static_cast<double>(m) * static_cast<double>(n);
  while (i < m && j < n) {
    const int64_t qa = (i + 1) * n;
    const int64_t qb = (j + 1) * m;
    const int64_t q = std::min(qa, qb);
    w += static_cast<double>(q - cum) / denom * std::abs(a[i] - b[j]);
    cum = q;
    if (qa == q) ++i;
    if (qb == q) ++j;
  }
  return w;
}

}  // namespace

double gaussian_sliced_w1(const DiagGaussian& g1, const DiagGaussian& g2,
                          int64_t n_directions, RngStream& rng) {
  check_dims(g1.mean.size(), g2.mean.size(), "gaussian_sliced_w1");
  if (n_directions < 1) {
    fail(ErrorCode::InvalidArgument, "need at least one direction");
  }
  const int64_t d = static_cast<int64_t>(g1.mean.size());
  double acc = 0.0;
  for (int64_t k = 0; k < n_directions; ++k) {
    auto u = random_direction(d, rng);
    double m1 = 0.0, m2 = 0.0, v1 = 0.0, v2 = 0.0;
    for (int64_t t = 0; t < d; ++t) {
      m1 += u[t] * g1.mean[t];
      m2 += u[t] * g2.mean[t];
      v1 += u[t] * u[t] * g1.variance[t];
      v2 += u[t] * u[t] * g2.variance[t];
    }
    acc += gaussian_w1_1d(m1, std::sqrt(v1), m2, std::sqrt(v2));
  }
  return acc / static_cast<double>(n_directions);
}

double empirical_domain_distance(const Tensor& feats_a, const Tensor& feats_b,
                                 int64_t n_projections, RngStream& rng) {
  if (feats_a.rank() != 2 || feats_b.rank() != 2) {
    fail(ErrorCode::ShapeMismatch, "feature sets must be [N,d] tensors");
  }
  if (feats_a.dim(0) < 1 || feats_b.dim(0) < 1) {
    fail(ErrorCode::EmptyInput, "empty feature set");
  }
  check_dims(static_cast<size_t>(feats_a.dim(1)),
             static_cast<size_t>(feats_b.dim(1)), "empirical_domain_distance");
  if (n_projections < 1) {
    fail(ErrorCode::InvalidArgument, "need at least one projection");
  }
  if (!feats_a.all_finite() || !feats_b.all_finite()) {
    fail(ErrorCode::NonFinite, "non-finite value in feature set");
  }
  const int64_t na = feats_a.dim(0), nb = feats_b.dim(0), d = feats_a.dim(1);
  std::vector<double> pa(static_cast<size_t>(na)), pb(static_cast<size_t>(nb));
  double acc = 0.0;
  for (int64_t k = 0; k < n_projections; ++k) {
    auto u = random_direction(d, rng);
    for (int64_t i = 0; i < na; ++i) {
      double s = 0.0;
      for (int64_t t = 0; t < d; ++t) s += feats_a[i * d + t] * u[t];
      pa[i] = s;
    }
    for (int64_t i = 0; i < nb; ++i) {
      double s = 0.0;
      for (int64_t t = 0; t < d; ++t) s += feats_b[i * d + t] * u[t];
      pb[i] = s;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    acc += w1_sorted(pa, pb);
  }
  return acc / static_cast<double>(n_projections);
}

// ---- implicit regularization ----------------------------------------------

namespace {

struct Normalized {
  // Flat [n,C] arrays of per-sample per-channel mean and deviation norm,
  // plus unit deviation directions z, flat [n,C,N].
  std::vector<double> mu, norm, z;
  int64_t n = 0, c = 0, width = 0;
};

Normalized normalize_instance(const RegressionInstance& inst) {
  if (inst.w.rank() != 2) {
    fail(ErrorCode::ShapeMismatch,
         "coefficients must be [C,N], got " + shape_str(inst.w.shape()));
  }
  if (inst.x.rank() != 3) {
    fail(ErrorCode::ShapeMismatch,
         "samples must be [n,C,N], got " + shape_str(inst.x.shape()));
  }
  const int64_t c = inst.w.dim(0), width = inst.w.dim(1);
  const int64_t n = inst.x.dim(0);
  if (inst.x.dim(1) != c || inst.x.dim(2) != width) {
    fail(ErrorCode::ShapeMismatch, "samples " + shape_str(inst.x.shape()) +
                                       " do not match coefficients " +
                                       shape_str(inst.w.shape()));
  }
  if (static_cast<int64_t>(inst.y.size()) != n) {
    fail(ErrorCode::ShapeMismatch, "target count " +
                                       std::to_string(inst.y.size()) +
                                       " does not match sample count " +
                                       std::to_string(n));
  }
  check_dims(inst.sigma_mu_scope.size(), static_cast<size_t>(c),
             "sigma_mu_scope");
  check_dims(inst.sigma_sigma_scope.size(), static_cast<size_t>(c),
             "sigma_sigma_scope");

  Normalized out;
  out.n = n;
  out.c = c;
  out.width = width;
  out.mu.resize(static_cast<size_t>(n * c));
  out.norm.resize(static_cast<size_t>(n * c));
  out.z.resize(static_cast<size_t>(n * c * width));
  for (int64_t j = 0; j < n; ++j) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* row = &inst.x.data()[(j * c + ch) * width];
      double m = 0.0;
      for (int64_t t = 0; t < width; ++t) m += row[t];
      m /= static_cast<double>(width);
      double nn = 0.0;
      for (int64_t t = 0; t < width; ++t) {
        const double dev = row[t] - m;
        nn += dev * dev;
      }
      nn = std::sqrt(nn);
      if (nn == 0.0) {
        fail(ErrorCode::DomainViolation,
             "zero-variance channel " + std::to_string(ch) + " in sample " +
                 std::to_string(j));
      }
      out.mu[j * c + ch] = m;
      out.norm[j * c + ch] = nn;
      double* zrow = &out.z[(j * c + ch) * width];
      double check = 0.0;
      for (int64_t t = 0; t < width; ++t) {
        zrow[t] = (row[t] - m) / nn;
        check += zrow[t] * zrow[t];
      }
      if (std::abs(std::sqrt(check) - 1.0) > 1e-10) {
        fail(ErrorCode::NonFinite,
             "deviation direction failed to normalize in channel " +
                 std::to_string(ch) + " of sample " + std::to_string(j));
      }
    }
  }
  return out;
}

}  // namespace

ImplicitRegParts implicit_reg_closed_form(const RegressionInstance& inst) {
  Normalized nz = normalize_instance(inst);
  const int64_t n = nz.n, c = nz.c, width = nz.width;

  ImplicitRegParts parts;
  for (int64_t j = 0; j < n; ++j) {
    double f = inst.b;
    for (int64_t i = 0; i < c * width; ++i) {
      f += inst.w[i] * inst.x[j * c * width + i];
    }
    const double r = f - inst.y[j];
    parts.empirical += r * r;
  }
  parts.empirical /= static_cast<double>(n);

  for (int64_t ch = 0; ch < c; ++ch) {
    double row_sum = 0.0;
    for (int64_t t = 0; t < width; ++t) row_sum += inst.w[ch * width + t];
    const double sm = inst.sigma_mu_scope[ch];
    parts.mu_term += sm * sm * row_sum * row_sum;
  }

  for (int64_t j = 0; j < n; ++j) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double dot = 0.0;
      const double* zrow = &nz.z[(j * c + ch) * width];
      for (int64_t t = 0; t < width; ++t) dot += inst.w[ch * width + t] * zrow[t];
      const double ss = inst.sigma_sigma_scope[ch];
      parts.sigma_term += ss * ss * dot * dot;
    }
  }
  parts.sigma_term /= static_cast<double>(n);

  parts.total = parts.empirical + parts.mu_term + parts.sigma_term;
  return parts;
}

McEstimate implicit_reg_monte_carlo(const RegressionInstance& inst,
                                    RngStream& rng, int64_t n_draws) {
  if (n_draws < 1) {
    fail(ErrorCode::InvalidArgument, "need at least one draw");
  }
  Normalized nz = normalize_instance(inst);
  const int64_t n = nz.n, c = nz.c, width = nz.width;

  std::vector<double> eps_mu(static_cast<size_t>(c));
  std::vector<double> eps_sigma(static_cast<size_t>(c));
  std::vector<double> xhat(static_cast<size_t>(width));
  double sum = 0.0, sum_sq = 0.0;
  for (int64_t d = 0; d < n_draws; ++d) {
    for (int64_t ch = 0; ch < c; ++ch) eps_mu[ch] = rng.normal();
    for (int64_t ch = 0; ch < c; ++ch) eps_sigma[ch] = rng.normal();
    double loss = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double f = inst.b;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double scale =
            nz.norm[j * c + ch] + eps_sigma[ch] * inst.sigma_sigma_scope[ch];
        const double shift =
            nz.mu[j * c + ch] + eps_mu[ch] * inst.sigma_mu_scope[ch];
        const double* zrow = &nz.z[(j * c + ch) * width];
        const double* wrow = &inst.w.data()[ch * width];
        for (int64_t t = 0; t < width; ++t) {
          xhat[t] = scale * zrow[t] + shift;
          f += wrow[t] * xhat[t];
        }
      }
      const double r = f - inst.y[j];
      loss += r * r;
    }
    loss /= static_cast<double>(n);
    sum += loss;
    sum_sq += loss * loss;
  }
  McEstimate est;
  est.draws = n_draws;
  est.mean = sum / static_cast<double>(n_draws);
  if (n_draws > 1) {
    const double var =
        std::max(0.0, (sum_sq - sum * sum / static_cast<double>(n_draws)) /
                          static_cast<double>(n_draws - 1));
    est.std_error = std::sqrt(var / static_cast<double>(n_draws));
  }
  return est;
}

}  // namespace dsu
