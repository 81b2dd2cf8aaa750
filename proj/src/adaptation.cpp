#include "dsu/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dsu {

StatAccumulator::StatAccumulator(int64_t channels) : channels_(channels) {
  if (channels < 1) {
    fail(ErrorCode::InvalidArgument, "accumulator needs at least one channel");
  }
  mu_mean_.assign(static_cast<size_t>(channels), 0.0);
  mu_m2_.assign(static_cast<size_t>(channels), 0.0);
  sigma_mean_.assign(static_cast<size_t>(channels), 0.0);
  sigma_m2_.assign(static_cast<size_t>(channels), 0.0);
}

void StatAccumulator::add(std::span<const double> mu_row,
                          std::span<const double> sigma_row) {
  if (static_cast<int64_t>(mu_row.size()) != channels_ ||
      static_cast<int64_t>(sigma_row.size()) != channels_) {
    fail(ErrorCode::ShapeMismatch,
         "statistic row length does not match accumulator channels " +
             std::to_string(channels_));
  }
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (int64_t c = 0; c < channels_; ++c) {
    double d = mu_row[c] - mu_mean_[c];
    mu_mean_[c] += d * inv;
    mu_m2_[c] += d * (mu_row[c] - mu_mean_[c]);
    double e = sigma_row[c] - sigma_mean_[c];
    sigma_mean_[c] += e * inv;
    sigma_m2_[c] += e * (sigma_row[c] - sigma_mean_[c]);
  }
}

void StatAccumulator::add_batch(const InstanceStats& stats) {
  const int64_t b = stats.mu.dim(0), c = stats.mu.dim(1);
  for (int64_t i = 0; i < b; ++i) {
    add(stats.mu.data().subspan(static_cast<size_t>(i * c),
                                static_cast<size_t>(c)),
        stats.sigma.data().subspan(static_cast<size_t>(i * c),
                                   static_cast<size_t>(c)));
  }
}

void StatAccumulator::merge(const StatAccumulator& other) {
  if (other.channels_ != channels_) {
    fail(ErrorCode::ShapeMismatch, "cannot merge accumulators with " +
                                       std::to_string(channels_) + " and " +
                                       std::to_string(other.channels_) +
                                       " channels");
  }
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double nt = na + nb;
  for (int64_t c = 0; c < channels_; ++c) {
    double d = other.mu_mean_[c] - mu_mean_[c];
    mu_mean_[c] += d * nb / nt;
    mu_m2_[c] += other.mu_m2_[c] + d * d * na * nb / nt;
    double e = other.sigma_mean_[c] - sigma_mean_[c];
    sigma_mean_[c] += e * nb / nt;
    sigma_m2_[c] += other.sigma_m2_[c] + e * e * na * nb / nt;
  }
  count_ += other.count_;
}

ShiftRegion StatAccumulator::finalize(int64_t position, double n,
                                      double omega) const {
  if (count_ == 0) {
    fail(ErrorCode::EmptyInput, "no instances accumulated for position " +
                                    std::to_string(position));
  }
  if (n < 0.0) {
    fail(ErrorCode::InvalidArgument, "region scope n must be nonnegative");
  }
  if (omega < 0.0 || omega > 1.0) {
    fail(ErrorCode::InvalidArgument,
         "calibration weight omega must be in [0,1]");
  }
  ShiftRegion r;
  r.position = position;
  r.n = n;
  r.omega = omega;
  r.instances = count_;
  r.degenerate = count_ < 2;
  r.mu_bar = mu_mean_;
  r.sigma_bar = sigma_mean_;
  const double inv = 1.0 / static_cast<double>(count_);
  r.sigma_mu_bar.resize(static_cast<size_t>(channels_));
  r.sigma_sigma_bar.resize(static_cast<size_t>(channels_));
  for (int64_t c = 0; c < channels_; ++c) {
    r.sigma_mu_bar[c] = std::sqrt(std::max(0.0, mu_m2_[c] * inv));
    r.sigma_sigma_bar[c] = std::sqrt(std::max(0.0, sigma_m2_[c] * inv));
  }
  return r;
}

void CalibrationTelemetry::ensure(int64_t channels) {
  if (static_cast<int64_t>(mu_fired.size()) != channels) {
    mu_fired.assign(static_cast<size_t>(channels), 0);
    sigma_fired.assign(static_cast<size_t>(channels), 0);
    instances = 0;
  }
}

int64_t CalibrationTelemetry::total_fired() const {
  return std::accumulate(mu_fired.begin(), mu_fired.end(), int64_t{0}) +
         std::accumulate(sigma_fired.begin(), sigma_fired.end(), int64_t{0});
}

int64_t CalibrationTelemetry::total_slots() const {
  return instances * static_cast<int64_t>(mu_fired.size());
}

double calibrate_stat(double value, double center, double halfwidth,
                      double omega) {
  const double gap = center - value;
  const double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
  const double overhang = std::max(std::abs(gap) - halfwidth, 0.0);
  return value + omega * sign * overhang;
}

Tensor calibrate(const Tensor& x, const ShiftRegion& region, double eps,
                 bool strict, CalibrationTelemetry* telemetry) {
  if (x.rank() != 4 && x.rank() != 2) {
    fail(ErrorCode::ShapeMismatch,
         "calibrate wants [B,C,H,W] or [B,C], got " + shape_str(x.shape()));
  }
  const int64_t b = x.dim(0), c = x.dim(1);
  if (region.channels() != c) {
    fail(ErrorCode::ShapeMismatch,
         "region has " + std::to_string(region.channels()) +
             " channels, features have " + std::to_string(c));
  }
  if (region.degenerate && strict) {
    fail(ErrorCode::DegenerateRegion,
         "region at position " + std::to_string(region.position) +
             " was fitted from " + std::to_string(region.instances) +
             " instance(s)");
  }

  InstanceStats stats = instance_stats(x.detach(), eps);
  Tensor beta = Tensor::zeros({b, c});
  Tensor gamma = Tensor::zeros({b, c});
  if (telemetry) {
    telemetry->ensure(c);
    telemetry->instances += b;
  }
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t k = i * c + ch;
      const double mu = stats.mu[k];
      const double sg = stats.sigma[k];
      const double mu_half = region.n * region.sigma_mu_bar[ch];
      const double sg_half = region.n * region.sigma_sigma_bar[ch];
      beta[k] = calibrate_stat(mu, region.mu_bar[ch], mu_half, region.omega);
      gamma[k] = calibrate_stat(sg, region.sigma_bar[ch], sg_half,
                                region.omega);
      if (telemetry) {
        if (std::abs(region.mu_bar[ch] - mu) > mu_half) {
          ++telemetry->mu_fired[ch];
        }
        if (std::abs(region.sigma_bar[ch] - sg) > sg_half) {
          ++telemetry->sigma_fired[ch];
        }
      }
    }
  }

  // Scalar re-injection with a short circuit: a channel whose statistics
  // were left alone is copied through bitwise, so in-region instances are
  // reproduced exactly rather than up to divide-multiply round-off.
  const int64_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t k = i * c + ch;
      const double mu = stats.mu[k];
      const double sg = stats.sigma[k];
      const double* src = &x.data()[k * hw];
      double* dst = &out.data()[k * hw];
      if (beta[k] == mu && gamma[k] == sg) {
        std::copy_n(src, hw, dst);
      } else {
        for (int64_t s = 0; s < hw; ++s) {
          dst[s] = gamma[k] * (src[s] - mu) / sg + beta[k];
        }
      }
    }
  }
  return out;
}

void save_shift_regions(KvFile& kv, const std::vector<ShiftRegion>& regions) {
  kv.set_int("shift_regions.count", static_cast<int64_t>(regions.size()));
  for (size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    const std::string p = "shift_regions." + std::to_string(i) + ".";
    kv.set_int(p + "position", r.position);
    kv.set_double(p + "n", r.n);
    kv.set_double(p + "omega", r.omega);
    kv.set_int(p + "instances", r.instances);
    kv.set_bool(p + "degenerate", r.degenerate);
    kv.set_double_list(p + "mu_bar", r.mu_bar);
    kv.set_double_list(p + "sigma_bar", r.sigma_bar);
    kv.set_double_list(p + "sigma_mu_bar", r.sigma_mu_bar);
    kv.set_double_list(p + "sigma_sigma_bar", r.sigma_sigma_bar);
  }
}

std::vector<ShiftRegion> load_shift_regions(const KvFile& kv) {
  std::vector<ShiftRegion> regions;
  const int64_t count = kv.get_int("shift_regions.count");
  for (int64_t i = 0; i < count; ++i) {
    const std::string p = "shift_regions." + std::to_string(i) + ".";
    ShiftRegion r;
    r.position = kv.get_int(p + "position");
    r.n = kv.get_double(p + "n");
    r.omega = kv.get_double(p + "omega");
    r.instances = kv.get_int(p + "instances");
    r.degenerate = kv.get_bool(p + "degenerate");
    r.mu_bar = kv.get_double_list(p + "mu_bar");
    r.sigma_bar = kv.get_double_list(p + "sigma_bar");
    r.sigma_mu_bar = kv.get_double_list(p + "sigma_mu_bar");
    r.sigma_sigma_bar = kv.get_double_list(p + "sigma_sigma_bar");
    const size_t c = r.mu_bar.size();
    if (r.sigma_bar.size() != c || r.sigma_mu_bar.size() != c ||
        r.sigma_sigma_bar.size() != c) {
      fail(ErrorCode::Config, "inconsistent channel counts in region " +
                                  std::to_string(i));
    }
    regions.push_back(std::move(r));
  }
  return regions;
}

}  // namespace dsu
