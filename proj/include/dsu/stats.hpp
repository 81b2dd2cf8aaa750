#pragma once

#include "dsu/tensor.hpp"

namespace dsu {

/// Per-instance, per-channel feature statistics. Both tensors are [B,C] and
/// stay on the caller's tape, so losses built from them differentiate
/// through the spatial mean and the epsilon-guarded standard deviation.
struct InstanceStats {
  Tensor mu;
  Tensor sigma;
};

/// Per-channel standard deviations of the instance statistics across the
/// batch. Detached from the tape by default: the backward pass treats the
/// sampling scope as a constant, and only the per-instance statistics carry
/// gradient. Pass detach=false to differentiate through the scope as well.
struct BatchUncertainty {
  Tensor sigma_mu;
  Tensor sigma_sigma;
};

/// mu[b,c] = spatial mean, sigma[b,c] = sqrt(biased spatial variance + eps).
/// Accepts [B,C,H,W]; a 2-D [B,C] input is treated as [B,C,1,1], so its
/// variance is zero and sigma is exactly sqrt(eps).
InstanceStats instance_stats(const Tensor& x, double eps = 1e-6);

BatchUncertainty batch_uncertainty(const InstanceStats& stats,
                                   bool detach = true);

}  // namespace dsu
