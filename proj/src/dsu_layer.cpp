#include "dsu/dsu_layer.hpp"

namespace dsu {

Tensor dsu_forward_fixed(const Tensor& x, const Tensor& eps_mu,
                         const Tensor& eps_sigma, double eps,
                         bool detach_uncertainty, SampledStats* sampled,
                         DsuDiagnostics* diag) {
  if (x.rank() != 4 && x.rank() != 2) {
    fail(ErrorCode::ShapeMismatch,
         "dsu layer wants [B,C,H,W] or [B,C], got " + shape_str(x.shape()));
  }
  const int64_t b = x.dim(0), c = x.dim(1);
  const Shape bc{b, c};
  if (eps_mu.shape() != bc || eps_sigma.shape() != bc) {
    fail(ErrorCode::ShapeMismatch,
         "noise tensors must be " + shape_str(bc) + ", got " +
             shape_str(eps_mu.shape()) + " and " +
             shape_str(eps_sigma.shape()));
  }

  InstanceStats stats = instance_stats(x, eps);
  BatchUncertainty unc = batch_uncertainty(stats, detach_uncertainty);

  Tensor beta = stats.mu + eps_mu * unc.sigma_mu;        // [B,C] + [B,C]*[C]
  Tensor gamma = stats.sigma + eps_sigma * unc.sigma_sigma;

  if (diag) {
    for (int64_t i = 0; i < gamma.size(); ++i) {
      if (gamma[i] < 0.0) ++diag->gamma_negative;
    }
    diag->gamma_total += gamma.size();
  }
  if (sampled) {
    *sampled = {beta, gamma, eps_mu.detach(), eps_sigma.detach()};
  }

  const bool was_2d = x.rank() == 2;
  Tensor x4 = was_2d ? reshape(x, {b, c, 1, 1}) : x;
  Shape bc11{b, c, 1, 1};
  Tensor out = reshape(gamma, bc11) * (x4 - reshape(stats.mu, bc11)) /
                   reshape(stats.sigma, bc11) +
               reshape(beta, bc11);
  return was_2d ? reshape(out, {b, c}) : out;
}

Tensor dsu_forward(const Tensor& x, const DsuConfig& cfg, RngStream& rng,
                   bool training, DsuDiagnostics* diag) {
  if (!training) {
    fail(ErrorCode::WrongMode,
         "dsu_forward is a training-time layer; inference uses calibrate()");
  }
  if (cfg.p < 0.0 || cfg.p > 1.0) {
    fail(ErrorCode::InvalidArgument,
         "dsu probability must be in [0,1], got " + std::to_string(cfg.p));
  }
  if (x.rank() != 4 && x.rank() != 2) {
    fail(ErrorCode::ShapeMismatch,
         "dsu layer wants [B,C,H,W] or [B,C], got " + shape_str(x.shape()));
  }
  const double gate = rng.uniform();
  if (gate >= cfg.p) {
    if (diag) ++diag->skips;
    return x;
  }
  if (diag) ++diag->applications;
  const int64_t b = x.dim(0), c = x.dim(1);
  Tensor eps_mu = Tensor::random_normal({b, c}, rng);
  Tensor eps_sigma = Tensor::random_normal({b, c}, rng);
  return dsu_forward_fixed(x, eps_mu, eps_sigma, cfg.eps,
                           cfg.detach_uncertainty, nullptr, diag);
}

}  // namespace dsu
