#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "doctest.h"
#include "dsu/theory.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t = Tensor::zeros({m.rows(), m.cols()});
  for (int64_t i = 0; i < m.rows(); ++i) {
    for (int64_t j = 0; j < m.cols(); ++j) t.data()[i * m.cols() + j] = m(i, j);
  }
  return t;
}

Eigen::MatrixXd psd_sqrt_oracle(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd random_spd(int d, RngStream& rng, double jitter = 0.3) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  }
  return a * a.transpose() + jitter * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("diagonal gaussian distance on hand cases") {
  DiagGaussian g1{{0.0, 0.0}, {1.0, 1.0}};
  CHECK(gaussian_w2_diag(g1, g1) == 0.0);

  DiagGaussian g2{{3.0, 4.0}, {1.0, 1.0}};
  CHECK(gaussian_w2_diag(g1, g2) == doctest::Approx(5.0));

  DiagGaussian g3{{0.0, 0.0}, {4.0, 4.0}};
  // Per-dimension sd gap is 1, so W^2 = 2.
  CHECK(gaussian_w2_diag(g1, g3) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("diagonal gaussian distance is a metric on random triples") {
  RngStream rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    RngStream tr = rng.split(static_cast<uint64_t>(trial));
    auto draw = [&] {
      DiagGaussian g;
      for (int i = 0; i < 4; ++i) {
        g.mean.push_back(tr.normal());
        g.variance.push_back(std::abs(tr.normal()) + 0.05);
      }
      return g;
    };
    DiagGaussian a = draw(), b = draw(), c = draw();
    double ab = gaussian_w2_diag(a, b);
    double ba = gaussian_w2_diag(b, a);
    double ac = gaussian_w2_diag(a, c);
    double cb = gaussian_w2_diag(c, b);
    CHECK(ab == doctest::Approx(ba));
    CHECK(ab <= ac + cb + 1e-12);
    CHECK(ab >= 0.0);
  }
}

TEST_CASE("full-covariance distance agrees with the diagonal closed form") {
  RngStream rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    RngStream tr = rng.split(static_cast<uint64_t>(trial));
    const int64_t d = 5;
    DiagGaussian g1, g2;
    Tensor s1 = Tensor::zeros({d, d});
    Tensor s2 = Tensor::zeros({d, d});
    for (int64_t i = 0; i < d; ++i) {
      g1.mean.push_back(tr.normal());
      g2.mean.push_back(tr.normal());
      g1.variance.push_back(std::abs(tr.normal()) + 0.1);
      g2.variance.push_back(std::abs(tr.normal()) + 0.1);
      s1.data()[i * d + i] = g1.variance[i];
      s2.data()[i * d + i] = g2.variance[i];
    }
    double want = gaussian_w2_diag(g1, g2);
    double got = gaussian_w2_full(g1.mean, s1, g2.mean, s2);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("full-covariance distance on commuting covariances") {
  // For covariances sharing an eigenbasis the distance reduces to the
  // diagonal form in that basis; build such pairs from a random orthogonal
  // matrix and compare.
  RngStream rng(43);
  const int d = 6;
  Eigen::MatrixXd raw(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) raw(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  Eigen::MatrixXd q = qr.householderQ();

  DiagGaussian g1, g2;
  Eigen::VectorXd d1(d), d2(d);
  std::vector<double> mu1, mu2;
  for (int i = 0; i < d; ++i) {
    d1(i) = std::abs(rng.normal()) + 0.2;
    d2(i) = std::abs(rng.normal()) + 0.2;
    g1.variance.push_back(d1(i));
    g2.variance.push_back(d2(i));
    mu1.push_back(rng.normal());
    mu2.push_back(rng.normal());
  }
  // Means live in the original basis; rotate them so the mean gap norm is
  // preserved under q.
  g1.mean = mu1;
  g2.mean = mu2;
  double want = gaussian_w2_diag(g1, g2);

  Eigen::VectorXd m1(d), m2(d);
  for (int i = 0; i < d; ++i) {
    m1(i) = mu1[i];
    m2(i) = mu2[i];
  }
  Eigen::VectorXd rm1 = q * m1, rm2 = q * m2;
  std::vector<double> rmu1(rm1.data(), rm1.data() + d);
  std::vector<double> rmu2(rm2.data(), rm2.data() + d);
  Tensor s1 = from_eigen(q * d1.asDiagonal() * q.transpose());
  Tensor s2 = from_eigen(q * d2.asDiagonal() * q.transpose());
  double got = gaussian_w2_full(rmu1, s1, rmu2, s2);
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("full-covariance distance matches an optimal-coupling sampler") {
  RngStream rng(44);
  const int d = 3;
  Eigen::MatrixXd s1 = random_spd(d, rng);
  Eigen::MatrixXd s2 = random_spd(d, rng);
  std::vector<double> mu1 = {0.5, -1.0, 2.0};
  std::vector<double> mu2 = {-0.5, 0.5, 1.0};
  double w2 = gaussian_w2_full(mu1, from_eigen(s1), mu2, from_eigen(s2));

  // Monge map between the Gaussians: T(x) = mu2 + A (x - mu1) with
  // A = S1^{-1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}; the expected
  // squared pair distance under X ~ N(mu1, S1) is exactly W2^2.
  Eigen::MatrixXd root1 = psd_sqrt_oracle(s1);
  Eigen::MatrixXd root1_inv = root1.inverse();
  Eigen::MatrixXd mid = psd_sqrt_oracle(root1 * s2 * root1);
  Eigen::MatrixXd a = root1_inv * mid * root1_inv;

  Eigen::VectorXd m1(d), m2(d);
  for (int i = 0; i < d; ++i) {
    m1(i) = mu1[i];
    m2(i) = mu2[i];
  }
  const int64_t samples = 100000;
  double acc = 0.0;
  for (int64_t s = 0; s < samples; ++s) {
    Eigen::VectorXd z(d);
    for (int i = 0; i < d; ++i) z(i) = rng.normal();
    Eigen::VectorXd x = m1 + root1 * z;
    Eigen::VectorXd y = m2 + a * (x - m1);
    acc += (x - y).squaredNorm();
  }
  double mc = std::sqrt(acc / static_cast<double>(samples));
  CHECK(mc == doctest::Approx(w2).epsilon(0.05));
}

TEST_CASE("full-covariance distance rejects bad matrices") {
  std::vector<double> mu = {0.0, 0.0};
  Tensor not_psd({2, 2}, {1.0, 0.0, 0.0, -1.0});
  Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  try {
    (void)gaussian_w2_full(mu, not_psd, mu, eye);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainViolation);
  }
  try {
    std::vector<double> big_mu(65, 0.0);
    (void)gaussian_w2_full(big_mu, Tensor::zeros({65, 65}), big_mu,
                           Tensor::zeros({65, 65}));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  // Tiny asymmetric round-off is symmetrized away, not rejected.
  Tensor nearly({2, 2}, {1.0, 0.1 + 1e-13, 0.1, 1.0});
  CHECK(gaussian_w2_full(mu, nearly, mu, nearly) == doctest::Approx(0.0));
}

TEST_CASE("one-dimensional gaussian transport cost") {
  CHECK(gaussian_w1_1d(0.0, 1.0, 0.0, 1.0) == 0.0);
  // Pure mean gap: the coupling translates, cost is the gap.
  CHECK(gaussian_w1_1d(3.0, 2.0, 1.0, 2.0) == doctest::Approx(2.0));
  // Pure sd gap tau: E|tau Z| = tau sqrt(2/pi).
  const double root_2_over_pi = std::sqrt(2.0 / 3.14159265358979323846);
  CHECK(gaussian_w1_1d(0.0, 3.0, 0.0, 1.0) ==
        doctest::Approx(2.0 * root_2_over_pi));

  // General case against direct sampling of E|delta + tau Z|.
  RngStream rng(45);
  const double delta = 0.8, tau = 0.6;
  double acc = 0.0;
  const int64_t n = 200000;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(delta + tau * rng.normal());
  CHECK(gaussian_w1_1d(delta, 1.7, 0.0, 1.1) ==
        doctest::Approx(acc / static_cast<double>(n)).epsilon(0.01));
}

TEST_CASE("identical sample sets are at distance zero") {
  RngStream rng(46);
  Tensor a = Tensor::random_normal({20, 4}, rng);
  RngStream dir(5, "directions");
  CHECK(empirical_domain_distance(a, a, 32, dir) == 0.0);
}

TEST_CASE("point masses a unit apart are at distance one") {
  Tensor a = Tensor::zeros({3, 1});
  Tensor b = Tensor::full({5, 1}, 1.0);
  RngStream dir(6, "directions");
  CHECK(empirical_domain_distance(a, b, 16, dir) == doctest::Approx(1.0));
}

TEST_CASE("unequal supports use the merged quantile integral") {
  // A = {0, 1}, B = {0.5} in one dimension: the cdf gap is 1/2 on [0, 1/2]
  // and 1/2 on [1/2, 1], so W1 = 1/2 regardless of direction sign.
  Tensor a({2, 1}, {0.0, 1.0});
  Tensor b({1, 1}, {0.5});
  RngStream dir(7, "directions");
  CHECK(empirical_domain_distance(a, b, 8, dir) == doctest::Approx(0.5));
}

TEST_CASE("sample order does not change the distance") {
  RngStream rng(47);
  Tensor a = Tensor::random_normal({15, 3}, rng);
  Tensor b = Tensor::random_normal({11, 3}, rng);
  Tensor a_rev = Tensor::zeros({15, 3});
  for (int64_t i = 0; i < 15; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      a_rev.data()[(14 - i) * 3 + j] = a[i * 3 + j];
    }
  }
  RngStream d1(8, "directions");
  RngStream d2(8, "directions");
  CHECK(empirical_domain_distance(a, b, 32, d1) ==
        doctest::Approx(empirical_domain_distance(a_rev, b, 32, d2)));
}

TEST_CASE("empirical distance approaches the gaussian closed form") {
  RngStream rng(48);
  DiagGaussian g1{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  DiagGaussian g2{{2.0, -1.0, 0.5}, {2.25, 0.5, 1.0}};
  const int64_t n = 10000;
  Tensor a = Tensor::zeros({n, 3});
  Tensor b = Tensor::zeros({n, 3});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      a.data()[i * 3 + j] = g1.mean[j] + std::sqrt(g1.variance[j]) * rng.normal();
      b.data()[i * 3 + j] = g2.mean[j] + std::sqrt(g2.variance[j]) * rng.normal();
    }
  }
  RngStream d1(9, "directions");
  RngStream d2(9, "directions");
  double closed = gaussian_sliced_w1(g1, g2, 256, d1);
  double est = empirical_domain_distance(a, b, 256, d2);
  CHECK(est == doctest::Approx(closed).epsilon(0.1));
}

TEST_CASE("empirical distance validates its inputs") {
  RngStream dir(10, "directions");
  auto code_of = [&](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Config;
  };
  CHECK(code_of([&] {
          (void)gaussian_w2_diag(DiagGaussian{}, DiagGaussian{});
        }) == ErrorCode::EmptyInput);
  CHECK(code_of([&] {
          (void)empirical_domain_distance(Tensor::zeros({4, 3}),
                                          Tensor::zeros({4, 2}), 8, dir);
        }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] {
          (void)empirical_domain_distance(Tensor::zeros({4}),
                                          Tensor::zeros({4}), 8, dir);
        }) == ErrorCode::ShapeMismatch);
}

namespace {

RegressionInstance random_instance(uint64_t seed, int64_t n, int64_t c,
                                   int64_t width) {
  RngStream rng(seed, "instance");
  RegressionInstance inst;
  inst.w = Tensor::random_normal({c, width}, rng);
  inst.b = rng.normal();
  inst.x = Tensor::random_normal({n, c, width}, rng);
  for (int64_t j = 0; j < n; ++j) inst.y.push_back(rng.normal());
  for (int64_t ch = 0; ch < c; ++ch) {
    inst.sigma_mu_scope.push_back(std::abs(rng.normal()) * 0.5);
    inst.sigma_sigma_scope.push_back(std::abs(rng.normal()) * 0.5);
  }
  return inst;
}

}  // namespace

TEST_CASE("closed-form risk on a single-channel hand case") {
  RegressionInstance inst;
  inst.w = Tensor({1, 2}, {3.0, 1.0});
  inst.b = 0.5;
  inst.x = Tensor({1, 1, 2}, {2.0, 0.0});
  inst.y = {2.0};
  inst.sigma_mu_scope = {0.7};
  inst.sigma_sigma_scope = {0.3};
  ImplicitRegParts parts = implicit_reg_closed_form(inst);
  // f(x) = 3*2 + 1*0 + 0.5 = 6.5, residual 4.5 -> empirical 20.25.
  CHECK(parts.empirical == doctest::Approx(20.25));
  // Row sum 4: mean penalty 0.49 * 16.
  CHECK(parts.mu_term == doctest::Approx(7.84));
  // z = (1,-1)/sqrt(2), <w,z> = sqrt(2): deviation penalty 0.09 * 2.
  CHECK(parts.sigma_term == doctest::Approx(0.18));
  CHECK(parts.total == doctest::Approx(28.27));
}

TEST_CASE("zero scope reduces the risk to the empirical term") {
  RegressionInstance inst = random_instance(51, 6, 3, 4);
  std::fill(inst.sigma_mu_scope.begin(), inst.sigma_mu_scope.end(), 0.0);
  std::fill(inst.sigma_sigma_scope.begin(), inst.sigma_sigma_scope.end(), 0.0);
  ImplicitRegParts parts = implicit_reg_closed_form(inst);
  CHECK(parts.mu_term == 0.0);
  CHECK(parts.sigma_term == 0.0);
  CHECK(parts.total == parts.empirical);
}

TEST_CASE("zero coefficients leave only the bias residual") {
  RegressionInstance inst = random_instance(52, 5, 2, 3);
  inst.w = Tensor::zeros({2, 3});
  ImplicitRegParts parts = implicit_reg_closed_form(inst);
  CHECK(parts.mu_term == 0.0);
  CHECK(parts.sigma_term == 0.0);
  double want = 0.0;
  for (double y : inst.y) want += (inst.b - y) * (inst.b - y);
  want /= static_cast<double>(inst.y.size());
  CHECK(parts.empirical == doctest::Approx(want));
}

TEST_CASE("the penalties never lower the risk") {
  for (uint64_t seed = 60; seed < 70; ++seed) {
    RegressionInstance inst = random_instance(seed, 4, 3, 5);
    ImplicitRegParts parts = implicit_reg_closed_form(inst);
    CHECK(parts.mu_term >= 0.0);
    CHECK(parts.sigma_term >= 0.0);
    CHECK(parts.total >= parts.empirical);
    CHECK(parts.total ==
          doctest::Approx(parts.empirical + parts.mu_term + parts.sigma_term));
  }
}

TEST_CASE("closed-form risk is invariant to sample and channel order") {
  RegressionInstance inst = random_instance(53, 4, 3, 5);
  ImplicitRegParts base = implicit_reg_closed_form(inst);

  RegressionInstance samples_swapped = inst;
  // Swap samples 0 and 3.
  const int64_t per = 3 * 5;
  for (int64_t i = 0; i < per; ++i) {
    std::swap(samples_swapped.x.data()[i], samples_swapped.x.data()[3 * per + i]);
  }
  std::swap(samples_swapped.y[0], samples_swapped.y[3]);
  ImplicitRegParts s = implicit_reg_closed_form(samples_swapped);
  CHECK(s.total == doctest::Approx(base.total).epsilon(1e-12));

  RegressionInstance channels_swapped = inst;
  // Swap channels 0 and 2 everywhere they appear.
  for (int64_t t = 0; t < 5; ++t) {
    std::swap(channels_swapped.w.data()[0 * 5 + t],
              channels_swapped.w.data()[2 * 5 + t]);
  }
  for (int64_t j = 0; j < 4; ++j) {
    for (int64_t t = 0; t < 5; ++t) {
      std::swap(channels_swapped.x.data()[(j * 3 + 0) * 5 + t],
                channels_swapped.x.data()[(j * 3 + 2) * 5 + t]);
    }
  }
  std::swap(channels_swapped.sigma_mu_scope[0], channels_swapped.sigma_mu_scope[2]);
  std::swap(channels_swapped.sigma_sigma_scope[0],
            channels_swapped.sigma_sigma_scope[2]);
  ImplicitRegParts ch = implicit_reg_closed_form(channels_swapped);
  CHECK(ch.total == doctest::Approx(base.total).epsilon(1e-12));
  CHECK(ch.mu_term == doctest::Approx(base.mu_term).epsilon(1e-12));
  CHECK(ch.sigma_term == doctest::Approx(base.sigma_term).epsilon(1e-12));
}

TEST_CASE("a constant channel is rejected by name") {
  RegressionInstance inst = random_instance(54, 3, 2, 4);
  for (int64_t t = 0; t < 4; ++t) inst.x.data()[(1 * 2 + 1) * 4 + t] = 2.5;
  try {
    (void)implicit_reg_closed_form(inst);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainViolation);
    CHECK(std::string(e.what()).find("channel 1") != std::string::npos);
  }
}

TEST_CASE("monte-carlo risk with zero scope is exact") {
  RegressionInstance inst = random_instance(55, 5, 2, 4);
  std::fill(inst.sigma_mu_scope.begin(), inst.sigma_mu_scope.end(), 0.0);
  std::fill(inst.sigma_sigma_scope.begin(), inst.sigma_sigma_scope.end(), 0.0);
  RngStream rng(1, "mc");
  McEstimate est = implicit_reg_monte_carlo(inst, rng, 500);
  ImplicitRegParts parts = implicit_reg_closed_form(inst);
  CHECK(est.std_error == doctest::Approx(0.0));
  CHECK(est.mean == doctest::Approx(parts.empirical).epsilon(1e-10));
}

TEST_CASE("monte-carlo risk is reproducible and tightens with more draws") {
  RegressionInstance inst = random_instance(56, 4, 2, 4);
  RngStream r1(2, "mc");
  RngStream r2(2, "mc");
  McEstimate a = implicit_reg_monte_carlo(inst, r1, 4000);
  McEstimate b = implicit_reg_monte_carlo(inst, r2, 4000);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
  CHECK(a.draws == 4000);

  RngStream r3(3, "mc");
  McEstimate wide = implicit_reg_monte_carlo(inst, r3, 4000);
  RngStream r4(3, "mc");
  McEstimate tight = implicit_reg_monte_carlo(inst, r4, 16000);
  double ratio = tight.std_error / wide.std_error;
  CHECK(ratio > 0.3);
  CHECK(ratio < 0.7);
}

TEST_CASE("closed form sits within the monte-carlo confidence band") {
  RegressionInstance inst = random_instance(57, 4, 2, 3);
  ImplicitRegParts parts = implicit_reg_closed_form(inst);
  RngStream rng(4, "mc");
  McEstimate est = implicit_reg_monte_carlo(inst, rng, 200000);
  CHECK(std::abs(est.mean - parts.total) < 3.5 * est.std_error + 1e-9);
}
