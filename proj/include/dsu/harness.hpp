#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsu/adaptation.hpp"
#include "dsu/dsu_layer.hpp"
#include "dsu/serialize.hpp"
#include "dsu/synthdata.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// MLP on flattened [C,H,W] features. Insertion positions: 0 is the raw
/// 4-D input (statistics over H x W), position i >= 1 sits after hidden
/// layer i (2-D features, so the statistic std there is the pure eps guard
/// and only the mean branch is stochastic).
struct ModelSpec {
  int64_t channels = 8;
  int64_t height = 4;
  int64_t width = 4;
  std::vector<int64_t> hidden = {48, 24};
  int64_t num_classes = 4;

  int64_t input_dim() const { return channels * height * width; }
  int64_t num_positions() const {
    return static_cast<int64_t>(hidden.size()) + 1;
  }
  std::vector<int64_t> all_positions() const;
  /// Channel count of the features entering a position.
  int64_t position_width(int64_t pos) const;
};

struct Mlp {
  ModelSpec spec;
  std::vector<Tensor> w;  // per layer, [in,out]; last layer is the classifier
  std::vector<Tensor> b;  // per layer, [out]

  static Mlp init(const ModelSpec& spec, RngStream& rng);
};

/// Everything a forward pass may consult. A null field disables the
/// corresponding behavior, so a context with only `training` set is a plain
/// deterministic MLP pass.
struct ForwardCtx {
  Tape* tape = nullptr;
  bool training = false;
  const DsuConfig* dsu = nullptr;                   // training-time sampling
  std::vector<RngStream>* dsu_streams = nullptr;    // one per position
  const std::vector<ShiftRegion>* regions = nullptr;  // inference calibration
  double eps = 1e-6;
  std::vector<CalibrationTelemetry>* telemetry = nullptr;  // per position
  DsuDiagnostics* diagnostics = nullptr;
  /// Observer of the features entering each position, before any module.
  std::function<void(int64_t pos, const Tensor& feat)> tap;
};

/// params_w/params_b are either the model's own tensors or traced copies of
/// them; x is [B,C,H,W]. Returns [B,K] logits.
Tensor mlp_forward(const ModelSpec& spec, const std::vector<Tensor>& params_w,
                   const std::vector<Tensor>& params_b, const Tensor& x,
                   ForwardCtx& ctx);

struct AdaptConfig {
  bool enabled = false;
  double n = 1.0;
  double omega = 0.5;
};

struct TrainConfig {
  int64_t epochs = 40;
  int64_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 5.0;     // global gradient norm cap, 0 disables
  double weight_decay = 0.0;  // L2 on weights, biases excluded
  uint64_t seed = 1;
  bool dsu_enabled = false;
  DsuConfig dsu;
  AdaptConfig adapt;
  // Fixed-budget training by default: an in-distribution validation slice
  // cannot see the target shift, so early stopping tends to freeze the model
  // before statistic-noise training has done its work. Set val_fraction > 0
  // to opt back in.
  double val_fraction = 0.0;
  int64_t patience = 8;    // epochs without val improvement before stopping
  int64_t min_epochs = 10;
  double eps = 1e-6;
};

struct TrainInfo {
  int64_t epochs_run = 0;
  int64_t best_epoch = -1;
  double best_val_accuracy = 0.0;
  double final_train_loss = 0.0;
  DsuDiagnostics dsu;
};

struct TrainResult {
  Mlp model;
  std::vector<ShiftRegion> regions;  // fitted at every position
  TrainInfo info;
};

/// Minibatch SGD with momentum and early stopping on a held-out validation
/// slice of the training set. DSU runs during training steps only. After
/// training, shift regions are fitted at every position in one full
/// deterministic pass with both modules off, so any evaluation mode can be
/// served from the result.
TrainResult train(const ModelSpec& spec, const TrainConfig& cfg,
                  const Dataset& train_set);

/// Regions refit from the same statistics with a different scope/weight.
std::vector<ShiftRegion> with_scope(std::vector<ShiftRegion> regions, double n,
                                    double omega);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<CalibrationTelemetry> telemetry;  // per position, empty if off
};

EvalResult evaluate(const Mlp& model, const std::vector<ShiftRegion>& regions,
                    const Dataset& data, bool use_adaptation,
                    double eps = 1e-6, int64_t batch_size = 256);

/// Per-position discrepancy between source and target feature statistics,
/// plus sliced-W1 domain distances on the flattened features. The statistic
/// gaps are raw; the distances are computed after standardizing each feature
/// column by the pooled source-plus-target spread at that position, so they
/// are comparable across models whose activation scales differ.
struct PositionStats {
  int64_t position = 0;
  std::vector<double> mu_gap;     // [C_pos]
  std::vector<double> sigma_gap;  // [C_pos]
  double source_target_w1 = 0.0;  // pooled sources vs target
  std::vector<double> source_pool_w1;  // each source vs the pooled sources
};

struct StatsReport {
  std::vector<PositionStats> positions;
  std::vector<std::string> source_ids;
};

StatsReport stats_report(const Mlp& model, const std::vector<Dataset>& sources,
                         const Dataset& target, double eps = 1e-6,
                         int64_t n_projections = 64, uint64_t seed = 7,
                         int64_t batch_size = 256);

/// The four-arm module comparison on one split and seed: plain training,
/// plain training + calibration, DSU training, DSU training + calibration.
struct ModuleArm {
  std::string name;
  double accuracy = 0.0;
};

std::vector<ModuleArm> run_module_ablation(const ModelSpec& spec,
                                           const TrainConfig& base,
                                           const LodoSplit& split);

/// Checkpoint: model dimensions, weights and fitted regions in one kv file.
KvFile build_checkpoint(const Mlp& model,
                        const std::vector<ShiftRegion>& regions);
struct Checkpoint {
  Mlp model;
  std::vector<ShiftRegion> regions;
};
Checkpoint load_checkpoint(const KvFile& kv);

}  // namespace dsu
