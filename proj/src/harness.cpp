#include "dsu/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsu/stats.hpp"
#include "dsu/theory.hpp"

namespace dsu {

std::vector<int64_t> ModelSpec::all_positions() const {
  std::vector<int64_t> p(static_cast<size_t>(num_positions()));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

int64_t ModelSpec::position_width(int64_t pos) const {
  if (pos < 0 || pos >= num_positions()) {
    fail(ErrorCode::InvalidArgument,
         "position " + std::to_string(pos) + " out of range");
  }
  return pos == 0 ? channels : hidden[static_cast<size_t>(pos - 1)];
}

Mlp Mlp::init(const ModelSpec& spec, RngStream& rng) {
  if (spec.hidden.empty()) {
    fail(ErrorCode::InvalidArgument, "model needs at least one hidden layer");
  }
  Mlp m;
  m.spec = spec;
  std::vector<int64_t> dims;
  dims.push_back(spec.input_dim());
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.num_classes);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
    Tensor w = Tensor::random_normal({dims[l], dims[l + 1]}, rng);
    for (int64_t i = 0; i < w.size(); ++i) w[i] *= scale;
    m.w.push_back(std::move(w));
    m.b.push_back(Tensor::zeros({dims[l + 1]}));
  }
  return m;
}

namespace {

bool has_position(const std::vector<int64_t>& positions, int64_t pos) {
  return std::find(positions.begin(), positions.end(), pos) != positions.end();
}

const ShiftRegion* find_region(const std::vector<ShiftRegion>& regions,
                               int64_t pos) {
  for (const auto& r : regions) {
    if (r.position == pos) return &r;
  }
  return nullptr;
}

Tensor at_position(Tensor feat, int64_t pos, ForwardCtx& ctx) {
  if (ctx.tap) ctx.tap(pos, feat);
  if (ctx.training && ctx.dsu && has_position(ctx.dsu->positions, pos)) {
    if (!ctx.dsu_streams || pos >= static_cast<int64_t>(ctx.dsu_streams->size())) {
      fail(ErrorCode::InvalidArgument,
           "no noise stream for position " + std::to_string(pos));
    }
    feat = dsu_forward(feat, *ctx.dsu, (*ctx.dsu_streams)[static_cast<size_t>(pos)],
                       /*training=*/true, ctx.diagnostics);
  }
  if (!ctx.training && ctx.regions) {
    if (const ShiftRegion* r = find_region(*ctx.regions, pos)) {
      CalibrationTelemetry* tel = nullptr;
      if (ctx.telemetry) {
        if (pos >= static_cast<int64_t>(ctx.telemetry->size())) {
          ctx.telemetry->resize(static_cast<size_t>(pos) + 1);
        }
        tel = &(*ctx.telemetry)[static_cast<size_t>(pos)];
      }
      feat = calibrate(feat, *r, ctx.eps, /*strict=*/false, tel);
    }
  }
  return feat;
}

}  // namespace

Tensor mlp_forward(const ModelSpec& spec, const std::vector<Tensor>& params_w,
                   const std::vector<Tensor>& params_b, const Tensor& x,
                   ForwardCtx& ctx) {
  if (x.rank() != 4 || x.dim(1) != spec.channels || x.dim(2) != spec.height ||
      x.dim(3) != spec.width) {
    fail(ErrorCode::ShapeMismatch,
         "input must be [B," + std::to_string(spec.channels) + "," +
             std::to_string(spec.height) + "," + std::to_string(spec.width) +
             "], got " + shape_str(x.shape()));
  }
  const int64_t batch = x.dim(0);
  Tensor h = at_position(x, 0, ctx);
  h = reshape(h, {batch, spec.input_dim()});
  for (size_t l = 0; l < spec.hidden.size(); ++l) {
    h = relu(matmul(h, params_w[l]) + params_b[l]);
    h = at_position(h, static_cast<int64_t>(l) + 1, ctx);
  }
  return matmul(h, params_w.back()) + params_b.back();
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx,
                   int64_t from, int64_t to) {
  Shape s = x.shape();
  const int64_t row = x.size() / s[0];
  s[0] = to - from;
  Tensor out = Tensor::zeros(s);
  for (int64_t i = from; i < to; ++i) {
    const int64_t src = idx[static_cast<size_t>(i)];
    std::copy(x.data().begin() + src * row, x.data().begin() + (src + 1) * row,
              out.data().begin() + (i - from) * row);
  }
  return out;
}

std::vector<int64_t> gather_labels(const std::vector<int64_t>& labels,
                                   const std::vector<int64_t>& idx,
                                   int64_t from, int64_t to) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(to - from));
  for (int64_t i = from; i < to; ++i) {
    out.push_back(labels[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
  }
  return out;
}

void shuffle_indices(std::vector<int64_t>& idx, RngStream& rng) {
  for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(0, i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
}

int64_t argmax_row(std::span<const double> row) {
  int64_t best = 0;
  for (size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = static_cast<int64_t>(k);
  }
  return best;
}

double plain_accuracy(const ModelSpec& spec, const std::vector<Tensor>& w,
                      const std::vector<Tensor>& b, const Tensor& x,
                      const std::vector<int64_t>& labels,
                      const std::vector<int64_t>& idx, int64_t from,
                      int64_t to, int64_t batch_size) {
  int64_t correct = 0;
  for (int64_t start = from; start < to; start += batch_size) {
    const int64_t stop = std::min(start + batch_size, to);
    Tensor xb = gather_rows(x, idx, start, stop);
    auto yb = gather_labels(labels, idx, start, stop);
    ForwardCtx ctx;
    Tensor logits = mlp_forward(spec, w, b, xb, ctx);
    const int64_t k = logits.dim(1);
    for (int64_t i = 0; i < logits.dim(0); ++i) {
      if (argmax_row(logits.data().subspan(static_cast<size_t>(i * k),
                                           static_cast<size_t>(k))) ==
          yb[static_cast<size_t>(i)]) {
        ++correct;
      }
    }
  }
  return to > from ? static_cast<double>(correct) / static_cast<double>(to - from)
                   : 0.0;
}

std::vector<ShiftRegion> fit_regions(const ModelSpec& spec,
                                     const std::vector<Tensor>& w,
                                     const std::vector<Tensor>& b,
                                     const Dataset& data, double eps, double n,
                                     double omega, int64_t batch_size) {
  if (data.size() == 0) {
    fail(ErrorCode::EmptyInput, "cannot fit shift regions on an empty set");
  }
  std::vector<StatAccumulator> acc;
  for (int64_t pos : spec.all_positions()) {
    acc.emplace_back(spec.position_width(pos));
  }
  std::vector<int64_t> idx(static_cast<size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t stop = std::min(start + batch_size, data.size());
    Tensor xb = gather_rows(data.x, idx, start, stop);
    ForwardCtx ctx;
    ctx.eps = eps;
    ctx.tap = [&](int64_t pos, const Tensor& feat) {
      acc[static_cast<size_t>(pos)].add_batch(instance_stats(feat.detach(), eps));
    };
    mlp_forward(spec, w, b, xb, ctx);
  }
  std::vector<ShiftRegion> regions;
  for (int64_t pos : spec.all_positions()) {
    regions.push_back(acc[static_cast<size_t>(pos)].finalize(pos, n, omega));
  }
  return regions;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const TrainConfig& cfg,
                  const Dataset& train_set) {
  if (train_set.size() < 4) {
    fail(ErrorCode::EmptyInput, "training set too small");
  }
  if (cfg.batch_size < 2 && cfg.dsu_enabled) {
    fail(ErrorCode::InvalidArgument,
         "batch size must be >= 2 with the stochastic layer enabled (the "
         "uncertainty estimate needs batch variance)");
  }
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    fail(ErrorCode::InvalidArgument, "batch size and epochs must be positive");
  }
  for (int64_t pos : cfg.dsu.positions) {
    if (pos < 0 || pos >= spec.num_positions()) {
      fail(ErrorCode::InvalidArgument,
           "dsu position " + std::to_string(pos) +
               " is not an insertion point of this model");
    }
  }

  RngStream root(cfg.seed, "train");
  RngStream init_rng = root.split("init");
  Mlp model = Mlp::init(spec, init_rng);

  // Each position draws noise from its own stream, so enabling or disabling
  // the layer at one position never shifts another position's draws, and a
  // p=0 run consumes nothing from the init/shuffle streams.
  RngStream dsu_base = cfg.dsu.seed != 0 ? RngStream(cfg.dsu.seed, "dsu")
                                         : root.split("dsu");
  std::vector<RngStream> dsu_streams;
  for (int64_t pos : spec.all_positions()) {
    dsu_streams.push_back(dsu_base.split(static_cast<uint64_t>(pos)));
  }

  // Deterministic validation slice for early stopping.
  std::vector<int64_t> idx(static_cast<size_t>(train_set.size()));
  std::iota(idx.begin(), idx.end(), 0);
  RngStream split_rng = root.split("val-split");
  shuffle_indices(idx, split_rng);
  const int64_t n_val = std::min<int64_t>(
      train_set.size() / 4,
      static_cast<int64_t>(cfg.val_fraction * static_cast<double>(train_set.size())));
  std::vector<int64_t> val_idx(idx.begin(), idx.begin() + n_val);
  std::vector<int64_t> fit_idx(idx.begin() + n_val, idx.end());

  std::vector<Tensor> vel_w, vel_b;
  for (const auto& t : model.w) vel_w.push_back(Tensor::zeros(t.shape()));
  for (const auto& t : model.b) vel_b.push_back(Tensor::zeros(t.shape()));

  TrainInfo info;
  std::vector<Tensor> best_w = model.w, best_b = model.b;
  int64_t stale = 0;
  double last_loss = 0.0;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream order_rng = root.split("shuffle").split(static_cast<uint64_t>(epoch));
    std::vector<int64_t> order = fit_idx;
    shuffle_indices(order, order_rng);

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < static_cast<int64_t>(order.size());
         start += cfg.batch_size) {
      const int64_t stop =
          std::min(start + cfg.batch_size, static_cast<int64_t>(order.size()));
      Tensor xb = gather_rows(train_set.x, order, start, stop);
      auto yb = gather_labels(train_set.labels, order, start, stop);

      Tape tape;
      std::vector<Tensor> tw, tb;
      for (const auto& t : model.w) tw.push_back(tape.var(t));
      for (const auto& t : model.b) tb.push_back(tape.var(t));

      ForwardCtx ctx;
      ctx.tape = &tape;
      ctx.training = true;
      ctx.eps = cfg.eps;
      if (cfg.dsu_enabled) {
        ctx.dsu = &cfg.dsu;
        ctx.dsu_streams = &dsu_streams;
        ctx.diagnostics = &info.dsu;
      }
      Tensor logits = mlp_forward(spec, tw, tb, xb, ctx);
      Tensor loss = softmax_cross_entropy(logits, yb);
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        fail(ErrorCode::Divergence, "non-finite loss at epoch " +
                                        std::to_string(epoch) + ", batch " +
                                        std::to_string(batches));
      }
      epoch_loss += loss_val;
      ++batches;

      Gradients grads = backward(tape, loss);
      std::vector<Tensor> gw, gb;
      double grad_sq = 0.0;
      for (size_t l = 0; l < model.w.size(); ++l) {
        gw.push_back(grads.at(tw[l]));
        gb.push_back(grads.at(tb[l]));
        for (int64_t i = 0; i < gw[l].size(); ++i) grad_sq += gw[l][i] * gw[l][i];
        for (int64_t i = 0; i < gb[l].size(); ++i) grad_sq += gb[l][i] * gb[l][i];
      }
      double scale = 1.0;
      if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(grad_sq);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
      }
      for (size_t l = 0; l < model.w.size(); ++l) {
        for (int64_t i = 0; i < gw[l].size(); ++i) {
          const double g = scale * gw[l][i] + cfg.weight_decay * model.w[l][i];
          vel_w[l][i] = cfg.momentum * vel_w[l][i] - cfg.lr * g;
          model.w[l][i] += vel_w[l][i];
        }
        for (int64_t i = 0; i < gb[l].size(); ++i) {
          vel_b[l][i] = cfg.momentum * vel_b[l][i] - cfg.lr * scale * gb[l][i];
          model.b[l][i] += vel_b[l][i];
        }
      }
    }
    last_loss = batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;
    info.epochs_run = epoch + 1;

    if (n_val > 0) {
      const double val_acc =
          plain_accuracy(spec, model.w, model.b, train_set.x, train_set.labels,
                         val_idx, 0, n_val, cfg.batch_size);
      if (val_acc > info.best_val_accuracy || info.best_epoch < 0) {
        info.best_val_accuracy = val_acc;
        info.best_epoch = epoch;
        best_w = model.w;
        best_b = model.b;
        stale = 0;
      } else {
        ++stale;
        if (epoch + 1 >= cfg.min_epochs && stale >= cfg.patience) break;
      }
    }
  }
  if (info.best_epoch >= 0) {
    model.w = best_w;
    model.b = best_b;
  }
  info.final_train_loss = last_loss;

  TrainResult result;
  result.regions = fit_regions(spec, model.w, model.b, train_set, cfg.eps,
                               cfg.adapt.n, cfg.adapt.omega, cfg.batch_size);
  result.model = std::move(model);
  result.info = info;
  return result;
}

std::vector<ShiftRegion> with_scope(std::vector<ShiftRegion> regions, double n,
                                    double omega) {
  if (n < 0.0) {
    fail(ErrorCode::InvalidArgument, "region scope n must be nonnegative");
  }
  if (omega < 0.0 || omega > 1.0) {
    fail(ErrorCode::InvalidArgument,
         "calibration weight omega must be in [0,1]");
  }
  for (auto& r : regions) {
    r.n = n;
    r.omega = omega;
  }
  return regions;
}

EvalResult evaluate(const Mlp& model, const std::vector<ShiftRegion>& regions,
                    const Dataset& data, bool use_adaptation, double eps,
                    int64_t batch_size) {
  if (use_adaptation && regions.empty()) {
    fail(ErrorCode::InvalidArgument,
         "adaptation requested but no fitted regions were provided");
  }
  if (data.size() == 0) {
    fail(ErrorCode::EmptyInput, "cannot evaluate on an empty set");
  }
  EvalResult result;
  std::vector<int64_t> idx(static_cast<size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  int64_t correct = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t stop = std::min(start + batch_size, data.size());
    Tensor xb = gather_rows(data.x, idx, start, stop);
    auto yb = gather_labels(data.labels, idx, start, stop);
    ForwardCtx ctx;
    ctx.eps = eps;
    if (use_adaptation) {
      ctx.regions = &regions;
      ctx.telemetry = &result.telemetry;
    }
    Tensor logits = mlp_forward(model.spec, model.w, model.b, xb, ctx);
    const int64_t k = logits.dim(1);
    for (int64_t i = 0; i < logits.dim(0); ++i) {
      if (argmax_row(logits.data().subspan(static_cast<size_t>(i * k),
                                           static_cast<size_t>(k))) ==
          yb[static_cast<size_t>(i)]) {
        ++correct;
      }
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return result;
}

namespace {

// Features entering each position, flattened to [N, d_pos], for one dataset.
std::vector<Tensor> collect_features(const Mlp& model, const Dataset& data,
                                     double eps, int64_t batch_size) {
  const ModelSpec& spec = model.spec;
  std::vector<std::vector<double>> buf(
      static_cast<size_t>(spec.num_positions()));
  std::vector<int64_t> idx(static_cast<size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t stop = std::min(start + batch_size, data.size());
    Tensor xb = gather_rows(data.x, idx, start, stop);
    ForwardCtx ctx;
    ctx.eps = eps;
    ctx.tap = [&](int64_t pos, const Tensor& feat) {
      auto& dst = buf[static_cast<size_t>(pos)];
      dst.insert(dst.end(), feat.data().begin(), feat.data().end());
    };
    mlp_forward(spec, model.w, model.b, xb, ctx);
  }
  std::vector<Tensor> out;
  for (int64_t pos : spec.all_positions()) {
    auto& v = buf[static_cast<size_t>(pos)];
    const int64_t d = static_cast<int64_t>(v.size()) / data.size();
    out.push_back(Tensor({data.size(), d}, std::move(v)));
  }
  return out;
}

// Centers and scales every feature column by the mean and std of the union
// of the two reference sets, then applies the same affine to all given
// tensors. Distances computed afterwards count displacement in units of the
// feature spread at that position instead of raw activation scale, which is
// not comparable between separately trained models.
void standardize_columns(const Tensor& ref_a, const Tensor& ref_b,
                         std::vector<Tensor*> apply_to) {
  const int64_t d = ref_a.dim(1);
  const int64_t na = ref_a.dim(0), nb = ref_b.dim(0);
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  std::vector<double> sq(static_cast<size_t>(d), 0.0);
  auto accumulate = [&](const Tensor& t) {
    for (int64_t i = 0; i < t.dim(0); ++i) {
      for (int64_t j = 0; j < d; ++j) {
        const double v = t[i * d + j];
        mean[static_cast<size_t>(j)] += v;
        sq[static_cast<size_t>(j)] += v * v;
      }
    }
  };
  accumulate(ref_a);
  accumulate(ref_b);
  const double n = static_cast<double>(na + nb);
  for (int64_t j = 0; j < d; ++j) {
    mean[static_cast<size_t>(j)] /= n;
    const double var =
        sq[static_cast<size_t>(j)] / n -
        mean[static_cast<size_t>(j)] * mean[static_cast<size_t>(j)];
    sq[static_cast<size_t>(j)] = std::sqrt(std::max(var, 0.0) + 1e-12);
  }
  for (Tensor* t : apply_to) {
    for (int64_t i = 0; i < t->dim(0); ++i) {
      for (int64_t j = 0; j < d; ++j) {
        (*t)[i * d + j] = ((*t)[i * d + j] - mean[static_cast<size_t>(j)]) /
                          sq[static_cast<size_t>(j)];
      }
    }
  }
}

// Column means of instance-level mu and sigma for [N, d] features seen as
// [N, C, H*W] maps (or plain [N, C] vectors).
void stat_means(const Tensor& feats, int64_t channels, double eps,
                std::vector<double>& mu_mean, std::vector<double>& sigma_mean) {
  const int64_t n = feats.dim(0);
  const int64_t spatial = feats.dim(1) / channels;
  Tensor shaped = reshape(feats, {n, channels, spatial, 1});
  InstanceStats stats = instance_stats(shaped, eps);
  mu_mean.assign(static_cast<size_t>(channels), 0.0);
  sigma_mean.assign(static_cast<size_t>(channels), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < channels; ++c) {
      mu_mean[static_cast<size_t>(c)] += stats.mu[i * channels + c];
      sigma_mean[static_cast<size_t>(c)] += stats.sigma[i * channels + c];
    }
  }
  for (auto& v : mu_mean) v /= static_cast<double>(n);
  for (auto& v : sigma_mean) v /= static_cast<double>(n);
}

}  // namespace

StatsReport stats_report(const Mlp& model, const std::vector<Dataset>& sources,
                         const Dataset& target, double eps,
                         int64_t n_projections, uint64_t seed,
                         int64_t batch_size) {
  if (sources.empty()) {
    fail(ErrorCode::EmptyInput, "need at least one source dataset");
  }
  const ModelSpec& spec = model.spec;
  Dataset pooled = concat(sources, "pooled");
  auto pooled_feats = collect_features(model, pooled, eps, batch_size);
  auto target_feats = collect_features(model, target, eps, batch_size);
  std::vector<std::vector<Tensor>> per_source;
  for (const auto& s : sources) {
    per_source.push_back(collect_features(model, s, eps, batch_size));
  }

  StatsReport report;
  for (const auto& s : sources) report.source_ids.push_back(s.domain_id);
  RngStream rng(seed, "stats-report");
  for (int64_t pos : spec.all_positions()) {
    PositionStats ps;
    ps.position = pos;
    const int64_t c = spec.position_width(pos);
    std::vector<double> mu_src, sg_src, mu_tgt, sg_tgt;
    stat_means(pooled_feats[static_cast<size_t>(pos)], c, eps, mu_src, sg_src);
    stat_means(target_feats[static_cast<size_t>(pos)], c, eps, mu_tgt, sg_tgt);
    ps.mu_gap.resize(static_cast<size_t>(c));
    ps.sigma_gap.resize(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
      ps.mu_gap[static_cast<size_t>(ch)] =
          std::abs(mu_src[static_cast<size_t>(ch)] - mu_tgt[static_cast<size_t>(ch)]);
      ps.sigma_gap[static_cast<size_t>(ch)] =
          std::abs(sg_src[static_cast<size_t>(ch)] - sg_tgt[static_cast<size_t>(ch)]);
    }
    std::vector<Tensor*> at_position = {
        &pooled_feats[static_cast<size_t>(pos)],
        &target_feats[static_cast<size_t>(pos)]};
    for (auto& sf : per_source) {
      at_position.push_back(&sf[static_cast<size_t>(pos)]);
    }
    standardize_columns(pooled_feats[static_cast<size_t>(pos)],
                        target_feats[static_cast<size_t>(pos)], at_position);
    RngStream pos_rng = rng.split(static_cast<uint64_t>(pos));
    ps.source_target_w1 = empirical_domain_distance(
        pooled_feats[static_cast<size_t>(pos)],
        target_feats[static_cast<size_t>(pos)], n_projections, pos_rng);
    for (size_t s = 0; s < sources.size(); ++s) {
      RngStream s_rng = pos_rng.split(static_cast<uint64_t>(s));
      ps.source_pool_w1.push_back(empirical_domain_distance(
          per_source[s][static_cast<size_t>(pos)],
          pooled_feats[static_cast<size_t>(pos)], n_projections, s_rng));
    }
    report.positions.push_back(std::move(ps));
  }
  return report;
}

std::vector<ModuleArm> run_module_ablation(const ModelSpec& spec,
                                           const TrainConfig& base,
                                           const LodoSplit& split) {
  TrainConfig plain_cfg = base;
  plain_cfg.dsu_enabled = false;
  TrainConfig dsu_cfg = base;
  dsu_cfg.dsu_enabled = true;

  TrainResult plain = train(spec, plain_cfg, split.train);
  TrainResult stoch = train(spec, dsu_cfg, split.train);

  std::vector<ModuleArm> arms;
  arms.push_back({"baseline",
                  evaluate(plain.model, {}, split.test, false, base.eps).accuracy});
  arms.push_back({"baseline+adapt",
                  evaluate(plain.model, plain.regions, split.test, true,
                           base.eps).accuracy});
  arms.push_back({"dsu",
                  evaluate(stoch.model, {}, split.test, false, base.eps).accuracy});
  arms.push_back({"dsu+adapt",
                  evaluate(stoch.model, stoch.regions, split.test, true,
                           base.eps).accuracy});
  return arms;
}

KvFile build_checkpoint(const Mlp& model,
                        const std::vector<ShiftRegion>& regions) {
  KvFile kv;
  kv.set_int("model.channels", model.spec.channels);
  kv.set_int("model.height", model.spec.height);
  kv.set_int("model.width", model.spec.width);
  kv.set_int_list("model.hidden", model.spec.hidden);
  kv.set_int("model.classes", model.spec.num_classes);
  for (size_t l = 0; l < model.w.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    kv.set_int_list(p + "w_shape", model.w[l].shape());
    kv.set_double_list(p + "w", std::vector<double>(model.w[l].data().begin(),
                                                    model.w[l].data().end()));
    kv.set_double_list(p + "b", std::vector<double>(model.b[l].data().begin(),
                                                    model.b[l].data().end()));
  }
  save_shift_regions(kv, regions);
  return kv;
}

Checkpoint load_checkpoint(const KvFile& kv) {
  Checkpoint cp;
  cp.model.spec.channels = kv.get_int("model.channels");
  cp.model.spec.height = kv.get_int("model.height");
  cp.model.spec.width = kv.get_int("model.width");
  cp.model.spec.hidden = kv.get_int_list("model.hidden");
  cp.model.spec.num_classes = kv.get_int("model.classes");
  const size_t layers = cp.model.spec.hidden.size() + 1;
  for (size_t l = 0; l < layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    Shape ws = kv.get_int_list(p + "w_shape");
    cp.model.w.push_back(Tensor(ws, kv.get_double_list(p + "w")));
    std::vector<double> b = kv.get_double_list(p + "b");
    const int64_t b_len = static_cast<int64_t>(b.size());
    cp.model.b.push_back(Tensor({b_len}, std::move(b)));
  }
  cp.regions = load_shift_regions(kv);
  return cp;
}

}  // namespace dsu
