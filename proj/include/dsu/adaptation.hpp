#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsu/serialize.hpp"
#include "dsu/stats.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// Summary of the training-domain statistic distribution at one insertion
/// position: centers (mu_bar, sigma_bar) and spreads (the Sigma_*_bar) of
/// the per-instance channel statistics, plus the calibration scope n and
/// strength omega. The per-channel intervals center +- n * spread are the
/// regions inside which test statistics are left alone.
struct ShiftRegion {
  int64_t position = 0;
  std::vector<double> mu_bar;           // [C]
  std::vector<double> sigma_bar;        // [C]
  std::vector<double> sigma_mu_bar;     // [C], >= 0
  std::vector<double> sigma_sigma_bar;  // [C], >= 0
  double n = 1.0;
  double omega = 0.5;
  int64_t instances = 0;
  bool degenerate = false;  // fitted from fewer than 2 instances

  int64_t channels() const { return static_cast<int64_t>(mu_bar.size()); }
};

/// Streaming per-channel accumulator (Welford) over the instance-mu and
/// instance-sigma rows seen during the fitting pass. Accumulators can be
/// merged, which equals accumulating the concatenated stream.
class StatAccumulator {
 public:
  explicit StatAccumulator(int64_t channels);

  /// One instance's [C] statistics.
  void add(std::span<const double> mu_row, std::span<const double> sigma_row);
  /// All instances of a batch, [B,C] stats.
  void add_batch(const InstanceStats& stats);
  void merge(const StatAccumulator& other);

  int64_t count() const { return count_; }
  int64_t channels() const { return channels_; }

  /// Centers are means, spreads are biased standard deviations over the
  /// accumulated instances. Errors on an empty accumulator; a single
  /// instance yields a degenerate region with zero spread.
  ShiftRegion finalize(int64_t position, double n, double omega) const;

 private:
  int64_t channels_;
  int64_t count_ = 0;
  std::vector<double> mu_mean_, mu_m2_;
  std::vector<double> sigma_mean_, sigma_m2_;
};

/// Counts, per channel, how often a test statistic fell outside its region
/// (so the clamp in the calibration offset was active).
struct CalibrationTelemetry {
  std::vector<int64_t> mu_fired;     // [C]
  std::vector<int64_t> sigma_fired;  // [C]
  int64_t instances = 0;

  void ensure(int64_t channels);
  int64_t total_fired() const;
  int64_t total_slots() const;  // instances * channels, per statistic kind
};

/// Scalar calibration rule: pull `value` toward `center` by omega times the
/// part of the gap that sticks out of [center - halfwidth, center + halfwidth].
/// Values inside the interval are returned unchanged.
double calibrate_stat(double value, double center, double halfwidth,
                      double omega);

/// Inference-time statistic calibration: recompute each instance's channel
/// statistics, move them toward the training-domain region per
/// calibrate_stat, and re-inject via gamma * (x - mu) / sigma + beta.
/// Statistics inside both regions reproduce x exactly (the same guarded
/// sigma is divided out and multiplied back). A degenerate region is an
/// error in strict mode; otherwise it calibrates against a zero-width
/// region.
Tensor calibrate(const Tensor& x, const ShiftRegion& region, double eps = 1e-6,
                 bool strict = false,
                 CalibrationTelemetry* telemetry = nullptr);

/// Checkpoint embedding: one `shift_regions.<i>.*` block per region.
void save_shift_regions(KvFile& kv, const std::vector<ShiftRegion>& regions);
std::vector<ShiftRegion> load_shift_regions(const KvFile& kv);

}  // namespace dsu
