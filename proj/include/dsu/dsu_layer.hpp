#pragma once

#include <cstdint>
#include <vector>

#include "dsu/rng.hpp"
#include "dsu/stats.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

struct DsuConfig {
  double p = 0.5;                    // probability of applying the layer
  std::vector<int64_t> positions;    // insertion points (owned by the model)
  double eps = 1e-6;                 // variance guard
  uint64_t seed = 0;                 // 0 = derive from the run seed
  bool detach_uncertainty = true;    // treat the sampling scope as constant
};

/// The sampled statistics of one stochastic pass, kept for inspection:
/// beta = mu + eps_mu * Sigma_mu, gamma = sigma + eps_sigma * Sigma_sigma.
struct SampledStats {
  Tensor beta;       // [B,C]
  Tensor gamma;      // [B,C]
  Tensor eps_mu;     // [B,C] standard-normal draws
  Tensor eps_sigma;  // [B,C]
};

/// Sampled gamma may be negative (the sampled std is not clamped); the
/// frequency is tracked here so runs can report it.
struct DsuDiagnostics {
  int64_t applications = 0;       // forwards where the gate fired
  int64_t skips = 0;              // forwards where it did not
  int64_t gamma_negative = 0;     // sampled gamma entries below zero
  int64_t gamma_total = 0;        // sampled gamma entries seen
};

/// Deterministic core of the layer: replace each instance's channel
/// statistics with (beta, gamma) built from caller-supplied noise, via
/// gamma * (x - mu) / sigma + beta. eps tensors must be [B,C]. Differentiable
/// with respect to x; the noise is a constant.
Tensor dsu_forward_fixed(const Tensor& x, const Tensor& eps_mu,
                         const Tensor& eps_sigma, double eps = 1e-6,
                         bool detach_uncertainty = true,
                         SampledStats* sampled = nullptr,
                         DsuDiagnostics* diag = nullptr);

/// Training-time layer: one uniform gate draw per forward pass (the whole
/// batch is gated together), then fresh per-instance per-channel noise from
/// the same stream when the gate fires. Each insertion position should own
/// its own stream so draws at one position never shift another. Calling this
/// in inference mode is an error; the inference path is statistic
/// calibration, not sampling.
Tensor dsu_forward(const Tensor& x, const DsuConfig& cfg, RngStream& rng,
                   bool training, DsuDiagnostics* diag = nullptr);

}  // namespace dsu
