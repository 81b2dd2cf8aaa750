#include "dsu/stats.hpp"

namespace dsu {

namespace {

Tensor as_4d(const Tensor& x) {
  if (x.rank() == 4) return x;
  if (x.rank() == 2) return reshape(x, {x.dim(0), x.dim(1), 1, 1});
  fail(ErrorCode::ShapeMismatch,
       "feature tensor must be [B,C,H,W] or [B,C], got " +
           shape_str(x.shape()));
}

}  // namespace

InstanceStats instance_stats(const Tensor& x, double eps) {
  if (eps < 0.0) {
    fail(ErrorCode::InvalidArgument, "eps must be nonnegative");
  }
  if (!x.all_finite()) {
    fail(ErrorCode::NonFinite, "non-finite value in feature tensor");
  }
  Tensor x4 = as_4d(x);
  const int64_t b = x4.dim(0), c = x4.dim(1);
  Tensor mu = reshape(mean(x4, {2, 3}, /*keepdims=*/true), {b, c});
  Tensor var = reshape(variance(x4, {2, 3}, /*keepdims=*/true), {b, c});
  Tensor sigma = sqrt(var + eps);
  return {std::move(mu), std::move(sigma)};
}

BatchUncertainty batch_uncertainty(const InstanceStats& stats, bool detach) {
  const Tensor& mu = detach ? stats.mu.detach() : stats.mu;
  const Tensor& sigma = detach ? stats.sigma.detach() : stats.sigma;
  Tensor sm = sqrt(variance(mu, {0}, /*keepdims=*/false));
  Tensor ss = sqrt(variance(sigma, {0}, /*keepdims=*/false));
  return {std::move(sm), std::move(ss)};
}

}  // namespace dsu
