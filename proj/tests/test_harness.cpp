#include <cmath>
#include <set>

#include "doctest.h"
#include "dsu/harness.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

TaskSpec tiny_task(uint64_t seed = 11) {
  TaskSpec task;
  task.num_classes = 3;
  task.channels = 4;
  task.height = 3;
  task.width = 3;
  task.samples_per_domain_per_class = 30;
  task.num_sources = 3;
  task.seed = seed;
  return task;
}

ModelSpec tiny_model(const TaskSpec& task) {
  ModelSpec spec;
  spec.channels = task.channels;
  spec.height = task.height;
  spec.width = task.width;
  spec.hidden = {16, 8};
  spec.num_classes = task.num_classes;
  return spec;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.min_epochs = 6;
  cfg.batch_size = 32;
  cfg.seed = 3;
  return cfg;
}

bool same_weights(const Mlp& a, const Mlp& b) {
  if (a.w.size() != b.w.size()) return false;
  for (size_t l = 0; l < a.w.size(); ++l) {
    for (int64_t i = 0; i < a.w[l].size(); ++i) {
      if (a.w[l][i] != b.w[l][i]) return false;
    }
    for (int64_t i = 0; i < a.b[l].size(); ++i) {
      if (a.b[l][i] != b.b[l][i]) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("model spec geometry") {
  ModelSpec spec;
  spec.channels = 4;
  spec.height = 3;
  spec.width = 3;
  spec.hidden = {16, 8};
  spec.num_classes = 3;
  CHECK(spec.input_dim() == 36);
  CHECK(spec.num_positions() == 3);
  CHECK(spec.all_positions() == std::vector<int64_t>{0, 1, 2});
  CHECK(spec.position_width(0) == 4);
  CHECK(spec.position_width(1) == 16);
  CHECK(spec.position_width(2) == 8);
}

TEST_CASE("plain forward pass has the right shapes and is deterministic") {
  TaskSpec task = tiny_task();
  ModelSpec spec = tiny_model(task);
  RngStream rng(5, "init");
  Mlp model = Mlp::init(spec, rng);
  REQUIRE(model.w.size() == 3);
  CHECK(model.w[0].shape() == Shape{36, 16});
  CHECK(model.w[2].shape() == Shape{8, 3});

  RngStream data(1, "x");
  Tensor x = Tensor::random_normal({5, 4, 3, 3}, data);
  ForwardCtx ctx;
  Tensor logits = mlp_forward(spec, model.w, model.b, x, ctx);
  CHECK(logits.shape() == Shape{5, 3});
  ForwardCtx ctx2;
  Tensor again = mlp_forward(spec, model.w, model.b, x, ctx2);
  for (int64_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == again[i]);
}

TEST_CASE("the tap sees features at every position in order") {
  TaskSpec task = tiny_task();
  ModelSpec spec = tiny_model(task);
  RngStream rng(6, "init");
  Mlp model = Mlp::init(spec, rng);
  RngStream data(2, "x");
  Tensor x = Tensor::random_normal({4, 4, 3, 3}, data);

  std::vector<int64_t> seen;
  std::vector<Shape> shapes;
  ForwardCtx ctx;
  ctx.tap = [&](int64_t pos, const Tensor& feat) {
    seen.push_back(pos);
    shapes.push_back(feat.shape());
  };
  (void)mlp_forward(spec, model.w, model.b, x, ctx);
  CHECK(seen == std::vector<int64_t>{0, 1, 2});
  CHECK(shapes[0] == Shape{4, 4, 3, 3});
  CHECK(shapes[1] == Shape{4, 16});
  CHECK(shapes[2] == Shape{4, 8});
}

TEST_CASE("training is deterministic under the seed") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainConfig cfg = quick_config();
  TrainResult a = train(spec, cfg, split.train);
  TrainResult b = train(spec, cfg, split.train);
  CHECK(same_weights(a.model, b.model));
  CHECK(a.info.epochs_run == b.info.epochs_run);
  CHECK(a.info.final_train_loss == b.info.final_train_loss);
  REQUIRE(a.regions.size() == b.regions.size());
  for (size_t i = 0; i < a.regions.size(); ++i) {
    CHECK(a.regions[i].mu_bar == b.regions[i].mu_bar);
  }

  TrainConfig other = cfg;
  other.seed = 77;
  TrainResult c = train(spec, other, split.train);
  CHECK_FALSE(same_weights(a.model, c.model));
}

TEST_CASE("a never-firing layer leaves training bitwise unchanged") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);

  TrainConfig off = quick_config();
  off.dsu_enabled = false;

  TrainConfig zero_p = quick_config();
  zero_p.dsu_enabled = true;
  zero_p.dsu.p = 0.0;
  zero_p.dsu.positions = {0, 1, 2};

  TrainResult a = train(spec, off, split.train);
  TrainResult b = train(spec, zero_p, split.train);
  CHECK(same_weights(a.model, b.model));
  CHECK(b.info.dsu.applications == 0);
  CHECK(b.info.dsu.skips > 0);
}

TEST_CASE("stochastic statistics change the trajectory but stay reproducible") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);

  TrainConfig cfg = quick_config();
  cfg.dsu_enabled = true;
  cfg.dsu.p = 0.5;
  cfg.dsu.positions = {0, 1, 2};
  TrainResult a = train(spec, cfg, split.train);
  TrainResult b = train(spec, cfg, split.train);
  CHECK(same_weights(a.model, b.model));
  CHECK(a.info.dsu.applications > 0);
  CHECK(a.info.dsu.skips > 0);

  TrainConfig off = quick_config();
  TrainResult c = train(spec, off, split.train);
  CHECK_FALSE(same_weights(a.model, c.model));
}

TEST_CASE("training fits one region per position with matching widths") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);
  REQUIRE(r.regions.size() == 3);
  for (int64_t pos = 0; pos < 3; ++pos) {
    CHECK(r.regions[pos].position == pos);
    CHECK(r.regions[pos].channels() == spec.position_width(pos));
    CHECK(r.regions[pos].instances == split.train.size());
    CHECK_FALSE(r.regions[pos].degenerate);
  }
}

TEST_CASE("a separable toy problem is learned to near-zero loss") {
  // Two well-separated classes in one channel; anything short of a tiny
  // loss means the optimizer or the graph is broken.
  const int64_t n = 60;
  Tensor x = Tensor::zeros({n, 1, 2, 2});
  std::vector<int64_t> labels(n);
  RngStream rng(8, "sep");
  for (int64_t i = 0; i < n; ++i) {
    const int64_t k = i % 2;
    labels[i] = k;
    for (int64_t j = 0; j < 4; ++j) {
      x.data()[i * 4 + j] = (k == 0 ? -2.0 : 2.0) + 0.1 * rng.normal();
    }
  }
  Dataset ds;
  ds.domain_id = "toy";
  ds.x = x;
  ds.labels = labels;

  ModelSpec spec;
  spec.channels = 1;
  spec.height = 2;
  spec.width = 2;
  spec.hidden = {8};
  spec.num_classes = 2;

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.min_epochs = 200;
  cfg.batch_size = 16;
  cfg.lr = 0.1;
  cfg.val_fraction = 0.0;
  cfg.seed = 5;
  TrainResult r = train(spec, cfg, ds);
  CHECK(r.info.final_train_loss < 0.05);
  EvalResult ev = evaluate(r.model, r.regions, ds, false);
  CHECK(ev.accuracy == doctest::Approx(1.0));
}

TEST_CASE("evaluation accuracy is the argmax hit rate") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  RngStream rng(9, "init");
  Mlp fresh = Mlp::init(spec, rng);
  // An untrained model should be near chance on a balanced set.
  EvalResult ev = evaluate(fresh, {}, split.test, false);
  CHECK(ev.accuracy >= 0.0);
  CHECK(ev.accuracy <= 1.0);
  CHECK(ev.telemetry.empty());

  TrainResult r = train(spec, quick_config(), split.train);
  EvalResult trained = evaluate(r.model, r.regions, split.train, false);
  CHECK(trained.accuracy > 2.0 * ev.accuracy - 0.5);
}

TEST_CASE("adapted evaluation needs regions and reports telemetry") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);

  try {
    (void)evaluate(r.model, {}, split.test, true);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }

  EvalResult ev = evaluate(r.model, r.regions, split.test, true);
  REQUIRE(ev.telemetry.size() == 3);
  for (const auto& t : ev.telemetry) {
    CHECK(t.instances == split.test.size());
  }
  // The held-out style is extrapolated, so at least the input position must
  // see out-of-region statistics.
  CHECK(ev.telemetry[0].total_fired() > 0);
}

TEST_CASE("scope rewrites keep the fitted centers") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);
  std::vector<ShiftRegion> wide = with_scope(r.regions, 3.0, 0.25);
  REQUIRE(wide.size() == r.regions.size());
  for (size_t i = 0; i < wide.size(); ++i) {
    CHECK(wide[i].n == 3.0);
    CHECK(wide[i].omega == 0.25);
    CHECK(wide[i].mu_bar == r.regions[i].mu_bar);
    CHECK(wide[i].sigma_mu_bar == r.regions[i].sigma_mu_bar);
  }
}

TEST_CASE("a zero-scope calibration changes nothing") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);
  std::vector<ShiftRegion> off = with_scope(r.regions, 0.0, 0.0);
  EvalResult plain = evaluate(r.model, r.regions, split.test, false);
  EvalResult calibrated = evaluate(r.model, off, split.test, true);
  CHECK(plain.accuracy == calibrated.accuracy);
}

TEST_CASE("statistic gap report against an identical target is all zero") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);

  // Hand the pooled sources back as the "target": every gap and the
  // source-target distance must be exactly zero.
  Dataset fake_target = split.train;
  fake_target.domain_id = "copy";
  StatsReport rep = stats_report(r.model, split.sources, fake_target);
  REQUIRE(rep.positions.size() == 3);
  for (const auto& pos : rep.positions) {
    CHECK(pos.source_target_w1 == 0.0);
    for (double g : pos.mu_gap) CHECK(g == doctest::Approx(0.0));
    for (double g : pos.sigma_gap) CHECK(g == doctest::Approx(0.0));
  }
}

TEST_CASE("statistic gap report is wider for the held-out domain") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);
  StatsReport rep = stats_report(r.model, split.sources, split.test);
  REQUIRE(rep.positions.size() == 3);
  REQUIRE(rep.source_ids.size() == 3);
  for (const auto& pos : rep.positions) {
    CHECK(pos.mu_gap.size() ==
          static_cast<size_t>(spec.position_width(pos.position)));
    CHECK(pos.source_pool_w1.size() == 3);
    CHECK(pos.source_target_w1 > 0.0);
  }
  // The extrapolated target should sit farther from the pool than the
  // sources do from each other, at least at the input.
  double max_source = 0.0;
  for (double d : rep.positions[0].source_pool_w1) {
    max_source = std::max(max_source, d);
  }
  CHECK(rep.positions[0].source_target_w1 > max_source);
}

TEST_CASE("module ablation produces the four arms") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainConfig cfg = quick_config();
  cfg.dsu.positions = {0, 1, 2};
  std::vector<ModuleArm> arms = run_module_ablation(spec, cfg, split);
  REQUIRE(arms.size() == 4);
  CHECK(arms[0].name == "baseline");
  CHECK(arms[1].name == "baseline+adapt");
  CHECK(arms[2].name == "dsu");
  CHECK(arms[3].name == "dsu+adapt");
  for (const auto& arm : arms) {
    CHECK(arm.accuracy >= 0.0);
    CHECK(arm.accuracy <= 1.0);
  }
}

TEST_CASE("checkpoints round trip bitwise") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);
  TrainResult r = train(spec, quick_config(), split.train);

  KvFile kv = build_checkpoint(r.model, r.regions);
  Checkpoint back = load_checkpoint(KvFile::parse(kv.serialize()));
  CHECK(back.model.spec.channels == spec.channels);
  CHECK(back.model.spec.hidden == spec.hidden);
  CHECK(same_weights(back.model, r.model));
  REQUIRE(back.regions.size() == r.regions.size());
  for (size_t i = 0; i < back.regions.size(); ++i) {
    CHECK(back.regions[i].mu_bar == r.regions[i].mu_bar);
    CHECK(back.regions[i].sigma_sigma_bar == r.regions[i].sigma_sigma_bar);
  }

  // The restored model evaluates identically.
  EvalResult a = evaluate(r.model, r.regions, split.test, true);
  EvalResult b = evaluate(back.model, back.regions, split.test, true);
  CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("training validates its configuration") {
  TaskSpec task = tiny_task();
  std::vector<Dataset> sets = generate(task);
  LodoSplit split = lodo_split(sets, task.target_id);
  ModelSpec spec = tiny_model(task);

  TrainConfig bad = quick_config();
  bad.dsu_enabled = true;
  bad.dsu.positions = {7};
  try {
    (void)train(spec, bad, split.train);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }

  TrainConfig tiny_batch = quick_config();
  tiny_batch.dsu_enabled = true;
  tiny_batch.dsu.positions = {0};
  tiny_batch.batch_size = 1;
  try {
    (void)train(spec, tiny_batch, split.train);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
}
