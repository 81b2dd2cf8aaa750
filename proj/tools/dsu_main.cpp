// Command-line front end: data generation, training, evaluation, ablations,
// statistic reports and the theory checks, all driven by one key-value
// config whose every field can be overridden with --key=value. Report files
// contain no timing or other machine-dependent content, so a repeated run
// with the same config and seed is byte-identical.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsu/adaptation.hpp"
#include "dsu/dsu_layer.hpp"
#include "dsu/error.hpp"
#include "dsu/harness.hpp"
#include "dsu/serialize.hpp"
#include "dsu/stats.hpp"
#include "dsu/synthdata.hpp"
#include "dsu/theory.hpp"

namespace {

using dsu::KvFile;

KvFile default_config() {
  KvFile c;
  c.set_int("seed", 1);
  c.set_int("data.seed", 11);
  c.set_int("data.classes", 4);
  c.set_int("data.channels", 8);
  c.set_int("data.height", 4);
  c.set_int("data.width", 4);
  c.set_int("data.samples_per_class", 500);
  c.set_int("data.sources", 3);
  c.set_double("data.noise", 0.1);
  c.set_double("data.channel_signal", 0.6);
  c.set_double("data.pattern_signal", 0.3);
  c.set_double("data.content_spread", 1.0);
  c.set_double("data.scale_lo", 0.75);
  c.set_double("data.scale_hi", 1.3);
  c.set_double("data.shift_max", 1.2);
  c.set_double("data.target_shift_margin", 5.0);
  c.set_double("data.target_scale_factor", 2.0);
  c.set_string("data.target_id", "target");
  c.set_string("data.held_out", "");
  c.set_int_list("model.hidden", {48, 24});
  c.set_int("train.epochs", 40);
  c.set_int("train.batch_size", 64);
  c.set_double("train.lr", 0.01);
  c.set_double("train.momentum", 0.9);
  c.set_double("train.clip_norm", 5.0);
  c.set_double("train.weight_decay", 0.0);
  c.set_double("train.val_fraction", 0.0);
  c.set_int("train.patience", 8);
  c.set_int("train.min_epochs", 10);
  c.set_double("train.eps", 1e-6);
  c.set_bool("dsu.enabled", false);
  c.set_double("dsu.p", 0.5);
  c.set_int_list("dsu.positions", {0, 1, 2});
  c.set_double("dsu.eps", 1e-6);
  c.set_int("dsu.seed", 0);
  c.set_bool("adapt.enabled", false);
  c.set_double("adapt.n", 1.0);
  c.set_double("adapt.omega", 0.5);
  c.set_int("report.projections", 64);
  c.set_int("report.seed", 7);
  c.set_int("theory.instances", 20);
  c.set_int("theory.draws", 200000);
  c.set_int("theory.seed", 5);
  return c;
}

void apply_overrides(KvFile& config, const std::vector<std::string>& extras) {
  for (const auto& tok : extras) {
    if (tok.rfind("--", 0) != 0) {
      dsu::fail(dsu::ErrorCode::Config, "unrecognized argument: " + tok);
    }
    const std::string body = tok.substr(2);
    const size_t eq = body.find('=');
    if (eq == std::string::npos || eq == 0) {
      dsu::fail(dsu::ErrorCode::Config,
                "override must look like --key=value, got: " + tok);
    }
    config.set(body.substr(0, eq), body.substr(eq + 1));
  }
}

KvFile build_config(const std::string& config_path,
                    const std::vector<std::string>& extras) {
  KvFile config = default_config();
  if (!config_path.empty()) {
    KvFile file = KvFile::load(config_path);
    for (const auto& k : file.keys()) config.set(k, file.raw(k));
  }
  apply_overrides(config, extras);
  if (const char* env = std::getenv("DSU_SEED")) {
    KvFile probe;
    probe.set("seed", env);
    probe.get_int("seed");  // validates
    config.set("seed", env);
  }
  return config;
}

dsu::TaskSpec task_from(const KvFile& c) {
  dsu::TaskSpec t;
  t.num_classes = c.get_int("data.classes");
  t.channels = c.get_int("data.channels");
  t.height = c.get_int("data.height");
  t.width = c.get_int("data.width");
  t.samples_per_domain_per_class = c.get_int("data.samples_per_class");
  t.num_sources = c.get_int("data.sources");
  t.noise = c.get_double("data.noise");
  t.channel_signal = c.get_double("data.channel_signal");
  t.pattern_signal = c.get_double("data.pattern_signal");
  t.content_spread = c.get_double("data.content_spread");
  t.scale_lo = c.get_double("data.scale_lo");
  t.scale_hi = c.get_double("data.scale_hi");
  t.shift_max = c.get_double("data.shift_max");
  t.target_shift_margin = c.get_double("data.target_shift_margin");
  t.target_scale_factor = c.get_double("data.target_scale_factor");
  t.target_id = c.get_string("data.target_id");
  t.seed = static_cast<uint64_t>(c.get_int("data.seed"));
  return t;
}

dsu::ModelSpec model_from(const KvFile& c, const dsu::TaskSpec& task) {
  dsu::ModelSpec m;
  m.channels = task.channels;
  m.height = task.height;
  m.width = task.width;
  m.num_classes = task.num_classes;
  m.hidden = c.get_int_list("model.hidden");
  return m;
}

dsu::TrainConfig train_from(const KvFile& c) {
  dsu::TrainConfig t;
  t.epochs = c.get_int("train.epochs");
  t.batch_size = c.get_int("train.batch_size");
  t.lr = c.get_double("train.lr");
  t.momentum = c.get_double("train.momentum");
  t.clip_norm = c.get_double("train.clip_norm");
  t.weight_decay = c.get_double("train.weight_decay");
  t.val_fraction = c.get_double("train.val_fraction");
  t.patience = c.get_int("train.patience");
  t.min_epochs = c.get_int("train.min_epochs");
  t.eps = c.get_double("train.eps");
  t.seed = static_cast<uint64_t>(c.get_int("seed"));
  t.dsu_enabled = c.get_bool("dsu.enabled");
  t.dsu.p = c.get_double("dsu.p");
  t.dsu.positions = c.get_int_list("dsu.positions");
  t.dsu.eps = c.get_double("dsu.eps");
  t.dsu.seed = static_cast<uint64_t>(c.get_int("dsu.seed"));
  t.adapt.enabled = c.get_bool("adapt.enabled");
  t.adapt.n = c.get_double("adapt.n");
  t.adapt.omega = c.get_double("adapt.omega");
  return t;
}

void echo_config(const KvFile& config, KvFile& out) {
  for (const auto& k : config.keys()) out.set("config." + k, config.raw(k));
}

class Timer {
 public:
  explicit Timer(std::string label)
      : label_(std::move(label)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    const auto end = std::chrono::steady_clock::now();
    const double s =
        std::chrono::duration_cast<std::chrono::duration<double>>(end - start_)
            .count();
    std::fprintf(stderr, "[time] %s: %.2fs\n", label_.c_str(), s);
  }

 private:
  std::string label_;
  std::chrono::steady_clock::time_point start_;
};

std::string held_out_domain(const KvFile& config, const dsu::TaskSpec& task) {
  std::string h = config.get_string("data.held_out");
  return h.empty() ? task.target_id : h;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) dsu::fail(dsu::ErrorCode::Io, "cannot write " + path);
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
  if (!out) dsu::fail(dsu::ErrorCode::Io, "failed writing " + path);
}

int cmd_gen_data(const KvFile& config, const std::string& out_dir) {
  Timer t("gen-data");
  dsu::TaskSpec task = task_from(config);
  auto sets = dsu::generate(task);
  dsu::save_datasets(out_dir, task, sets);
  int64_t total = 0;
  for (const auto& s : sets) total += s.size();
  std::cout << "wrote " << sets.size() << " domains, " << total
            << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const KvFile& config, const std::string& data_dir,
              const std::string& out_dir) {
  Timer t("train");
  auto loaded = dsu::load_datasets(data_dir);
  auto split = dsu::lodo_split(loaded.sets, held_out_domain(config, loaded.task));
  dsu::ModelSpec spec = model_from(config, loaded.task);
  dsu::TrainConfig cfg = train_from(config);

  dsu::TrainResult result = dsu::train(spec, cfg, split.train);

  std::filesystem::create_directories(out_dir);
  KvFile checkpoint = dsu::build_checkpoint(result.model, result.regions);
  echo_config(config, checkpoint);
  checkpoint.save(out_dir + "/checkpoint.kv");

  KvFile report;
  echo_config(config, report);
  report.set_int("result.epochs_run", result.info.epochs_run);
  report.set_int("result.best_epoch", result.info.best_epoch);
  report.set_double("result.best_val_accuracy", result.info.best_val_accuracy);
  report.set_double("result.final_train_loss", result.info.final_train_loss);
  report.set_int("result.dsu.applications", result.info.dsu.applications);
  report.set_int("result.dsu.skips", result.info.dsu.skips);
  report.set_int("result.dsu.gamma_negative", result.info.dsu.gamma_negative);
  report.set_int("result.dsu.gamma_total", result.info.dsu.gamma_total);

  const double train_acc =
      dsu::evaluate(result.model, {}, split.train, false, cfg.eps).accuracy;
  const double test_acc =
      dsu::evaluate(result.model, {}, split.test, false, cfg.eps).accuracy;
  auto adapted =
      dsu::evaluate(result.model, result.regions, split.test, true, cfg.eps);
  report.set_double("result.train_accuracy", train_acc);
  report.set_double("result.test_accuracy", test_acc);
  report.set_double("result.test_accuracy_adapted", adapted.accuracy);
  for (const auto& tel : adapted.telemetry) {
    if (tel.mu_fired.empty()) continue;
    const std::string p =
        "result.adapt.position_" +
        std::to_string(&tel - adapted.telemetry.data()) + ".";
    report.set_int(p + "instances", tel.instances);
    report.set_int(p + "fired", tel.total_fired());
    report.set_int(p + "slots", 2 * tel.total_slots());
  }
  report.save(out_dir + "/report.kv");
  std::cout << "train_accuracy = " << dsu::format_double(train_acc) << "\n"
            << "test_accuracy = " << dsu::format_double(test_acc) << "\n"
            << "test_accuracy_adapted = "
            << dsu::format_double(adapted.accuracy) << "\n";
  return 0;
}

int cmd_eval(const KvFile& config, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& domain,
             const std::string& out_path) {
  Timer t("eval");
  dsu::Checkpoint cp = dsu::load_checkpoint(KvFile::load(checkpoint_path));
  auto loaded = dsu::load_datasets(data_dir);
  const std::string want = domain.empty()
                               ? held_out_domain(config, loaded.task)
                               : domain;
  const dsu::Dataset* set = nullptr;
  for (const auto& s : loaded.sets) {
    if (s.domain_id == want) set = &s;
  }
  if (!set) {
    dsu::fail(dsu::ErrorCode::InvalidArgument, "unknown domain '" + want + "'");
  }
  const bool adapt = config.get_bool("adapt.enabled");
  const double n = config.get_double("adapt.n");
  const double omega = config.get_double("adapt.omega");
  auto regions = adapt ? dsu::with_scope(cp.regions, n, omega)
                       : std::vector<dsu::ShiftRegion>{};
  auto result = dsu::evaluate(cp.model, regions, *set, adapt,
                              config.get_double("train.eps"));
  KvFile report;
  echo_config(config, report);
  report.set_string("result.domain", want);
  report.set_bool("result.adaptation", adapt);
  report.set_double("result.accuracy", result.accuracy);
  if (!out_path.empty()) report.save(out_path);
  std::cout << "accuracy = " << dsu::format_double(result.accuracy) << "\n";
  return 0;
}

int cmd_report_stats(const KvFile& config, const std::string& checkpoint_path,
                     const std::string& data_dir, const std::string& out_dir) {
  Timer t("report-stats");
  dsu::Checkpoint cp = dsu::load_checkpoint(KvFile::load(checkpoint_path));
  auto loaded = dsu::load_datasets(data_dir);
  auto split = dsu::lodo_split(loaded.sets, held_out_domain(config, loaded.task));
  auto report = dsu::stats_report(
      cp.model, split.sources, split.test, config.get_double("train.eps"),
      config.get_int("report.projections"),
      static_cast<uint64_t>(config.get_int("report.seed")));

  std::filesystem::create_directories(out_dir);
  KvFile kv;
  echo_config(config, kv);
  std::vector<std::string> gap_rows;
  std::vector<std::string> dist_rows;
  for (const auto& ps : report.positions) {
    const std::string p = "position_" + std::to_string(ps.position) + ".";
    kv.set_double_list(p + "mu_gap", ps.mu_gap);
    kv.set_double_list(p + "sigma_gap", ps.sigma_gap);
    kv.set_double(p + "source_target_w1", ps.source_target_w1);
    kv.set_double_list(p + "source_pool_w1", ps.source_pool_w1);
    for (size_t c = 0; c < ps.mu_gap.size(); ++c) {
      gap_rows.push_back(std::to_string(ps.position) + "," +
                         std::to_string(c) + "," +
                         dsu::format_double(ps.mu_gap[c]) + "," +
                         dsu::format_double(ps.sigma_gap[c]));
    }
    dist_rows.push_back(std::to_string(ps.position) + ",source_pool,target," +
                        dsu::format_double(ps.source_target_w1));
    for (size_t s = 0; s < ps.source_pool_w1.size(); ++s) {
      dist_rows.push_back(std::to_string(ps.position) + "," +
                          report.source_ids[s] + ",source_pool," +
                          dsu::format_double(ps.source_pool_w1[s]));
    }
  }
  kv.save(out_dir + "/stats_report.kv");
  write_csv(out_dir + "/stat_gaps.csv", "position,channel,mu_gap,sigma_gap",
            gap_rows);
  write_csv(out_dir + "/domain_distance.csv", "position,from,to,sliced_w1",
            dist_rows);
  std::cout << "wrote " << out_dir << "/stats_report.kv\n";
  return 0;
}

int cmd_ablate(const KvFile& config, const std::string& data_dir,
               const std::string& out_dir, const std::string& which) {
  Timer t("ablate");
  auto loaded = dsu::load_datasets(data_dir);
  auto split = dsu::lodo_split(loaded.sets, held_out_domain(config, loaded.task));
  dsu::ModelSpec spec = model_from(config, loaded.task);
  dsu::TrainConfig base = train_from(config);
  std::filesystem::create_directories(out_dir);
  const bool all = which == "all";

  if (all || which == "p") {
    std::vector<std::string> rows;
    for (int i = 0; i <= 10; ++i) {
      dsu::TrainConfig cfg = base;
      cfg.dsu_enabled = true;
      cfg.dsu.p = 0.1 * i;
      auto r = dsu::train(spec, cfg, split.train);
      const double acc =
          dsu::evaluate(r.model, {}, split.test, false, cfg.eps).accuracy;
      const double acc_ad =
          dsu::evaluate(r.model, r.regions, split.test, true, cfg.eps).accuracy;
      rows.push_back(dsu::format_double(cfg.dsu.p) + "," +
                     dsu::format_double(acc) + "," +
                     dsu::format_double(acc_ad));
    }
    write_csv(out_dir + "/ablate_p.csv", "p,accuracy,accuracy_adapted", rows);
  }

  if (all || which == "positions") {
    std::vector<std::vector<int64_t>> subsets = {{}};
    const auto positions = spec.all_positions();
    for (int64_t pos : positions) subsets.push_back({pos});
    if (positions.size() > 1) {
      for (size_t i = 0; i + 1 < positions.size(); ++i) {
        subsets.push_back({positions[i], positions[i + 1]});
      }
      subsets.push_back(positions);
    }
    std::vector<std::string> rows;
    for (const auto& subset : subsets) {
      dsu::TrainConfig cfg = base;
      cfg.dsu_enabled = !subset.empty();
      cfg.dsu.positions = subset;
      auto r = dsu::train(spec, cfg, split.train);
      const double acc =
          dsu::evaluate(r.model, {}, split.test, false, cfg.eps).accuracy;
      std::string name = "none";
      if (!subset.empty()) {
        name.clear();
        for (size_t i = 0; i < subset.size(); ++i) {
          if (i) name += "+";
          name += std::to_string(subset[i]);
        }
      }
      rows.push_back(name + "," + dsu::format_double(acc));
    }
    write_csv(out_dir + "/ablate_positions.csv", "positions,accuracy", rows);
  }

  if (all || which == "scope") {
    dsu::TrainConfig cfg = base;
    cfg.dsu_enabled = true;
    auto r = dsu::train(spec, cfg, split.train);
    std::vector<std::string> rows;
    for (int ni = 0; ni <= 4; ++ni) {
      for (int wi = 0; wi <= 4; ++wi) {
        const double omega = 0.25 * wi;
        auto regions = dsu::with_scope(r.regions, ni, omega);
        const double acc =
            dsu::evaluate(r.model, regions, split.test, true, cfg.eps).accuracy;
        rows.push_back(std::to_string(ni) + "," + dsu::format_double(omega) +
                       "," + dsu::format_double(acc));
      }
    }
    write_csv(out_dir + "/ablate_scope.csv", "n,omega,accuracy", rows);
  }

  if (all || which == "modules") {
    auto arms = dsu::run_module_ablation(spec, base, split);
    std::vector<std::string> rows;
    for (const auto& a : arms) {
      rows.push_back(a.name + "," + dsu::format_double(a.accuracy));
    }
    write_csv(out_dir + "/ablate_modules.csv", "arm,accuracy", rows);
  }
  std::cout << "wrote ablation tables to " << out_dir << "\n";
  return 0;
}

int cmd_verify_theory(const KvFile& config, const std::string& out_dir) {
  Timer t("verify-theory");
  const int64_t instances = config.get_int("theory.instances");
  const int64_t draws = config.get_int("theory.draws");
  const uint64_t seed = static_cast<uint64_t>(config.get_int("theory.seed"));
  KvFile report;
  echo_config(config, report);
  bool all_pass = true;

  {  // Closed-form expected risk vs the Monte-Carlo oracle.
    dsu::RngStream rng(seed, "theory-instances");
    double worst_rel = 0.0, worst_se = 0.0;
    bool pass = true;
    for (int64_t i = 0; i < instances; ++i) {
      dsu::RngStream ir = rng.split(static_cast<uint64_t>(i));
      dsu::RegressionInstance inst;
      const int64_t c = 4, width = 3, n = 16;
      inst.w = dsu::Tensor::random_normal({c, width}, ir);
      inst.b = ir.normal();
      inst.x = dsu::Tensor::random_normal({n, c, width}, ir);
      inst.y.resize(n);
      for (auto& v : inst.y) v = ir.normal();
      inst.sigma_mu_scope.resize(c);
      inst.sigma_sigma_scope.resize(c);
      for (auto& v : inst.sigma_mu_scope) v = ir.uniform(0.0, 2.0);
      for (auto& v : inst.sigma_sigma_scope) v = ir.uniform(0.0, 2.0);

      auto cf = dsu::implicit_reg_closed_form(inst);
      dsu::RngStream mr = ir.split("mc");
      auto mc = dsu::implicit_reg_monte_carlo(inst, mr, draws);
      const double err = std::abs(mc.mean - cf.total);
      const double rel = err / std::max(1e-300, std::abs(cf.total));
      const double tol = std::max(0.01 * std::abs(cf.total),
                                  3.0 * mc.std_error);
      worst_rel = std::max(worst_rel, rel);
      if (mc.std_error > 0.0) {
        worst_se = std::max(worst_se, err / mc.std_error);
      }
      if (err > tol) pass = false;
    }
    report.set_int("regularizer.instances", instances);
    report.set_int("regularizer.draws", draws);
    report.set_double("regularizer.worst_rel_err", worst_rel);
    report.set_double("regularizer.worst_se_ratio", worst_se);
    report.set_bool("regularizer.pass", pass);
    std::cout << (pass ? "[PASS]" : "[FAIL]")
              << " expected-risk closed form vs Monte-Carlo oracle ("
              << instances << " instances, worst rel err "
              << dsu::format_double(worst_rel) << ")\n";
    all_pass = all_pass && pass;
  }

  {  // Gaussian W2: diagonal specialization, identity, mean shift, triangle.
    dsu::RngStream rng(seed, "theory-w2");
    double worst_diag = 0.0;
    int64_t triangle_violations = 0;
    for (int i = 0; i < 100; ++i) {
      const int64_t d = rng.uniform_int(1, 6);
      auto rand_gauss = [&](dsu::RngStream& r) {
        dsu::DiagGaussian g;
        g.mean.resize(d);
        g.variance.resize(d);
        for (auto& v : g.mean) v = r.normal() * 2.0;
        for (auto& v : g.variance) v = r.uniform(0.0, 4.0);
        return g;
      };
      dsu::DiagGaussian g1 = rand_gauss(rng), g2 = rand_gauss(rng),
                        g3 = rand_gauss(rng);
      auto diag_mat = [&](const dsu::DiagGaussian& g) {
        dsu::Tensor m = dsu::Tensor::zeros({d, d});
        for (int64_t k = 0; k < d; ++k) m[k * d + k] = g.variance[k];
        return m;
      };
      const double full =
          dsu::gaussian_w2_full(g1.mean, diag_mat(g1), g2.mean, diag_mat(g2));
      const double diag = dsu::gaussian_w2_diag(g1, g2);
      worst_diag = std::max(worst_diag, std::abs(full - diag));
      const double d12 = diag;
      const double d13 = dsu::gaussian_w2_diag(g1, g3);
      const double d32 = dsu::gaussian_w2_diag(g3, g2);
      if (d12 > d13 + d32 + 1e-9) ++triangle_violations;
    }
    dsu::DiagGaussian a{{0.0}, {1.0}}, b{{2.0}, {1.0}};
    const double mean_shift_err = std::abs(dsu::gaussian_w2_diag(a, b) - 2.0);
    const double self_dist = dsu::gaussian_w2_diag(a, a);
    const bool pass = worst_diag < 1e-10 && triangle_violations == 0 &&
                      mean_shift_err == 0.0 && self_dist == 0.0;
    report.set_double("w2.diag_vs_full_worst_diff", worst_diag);
    report.set_int("w2.triangle_violations", triangle_violations);
    report.set_double("w2.mean_shift_err", mean_shift_err);
    report.set_double("w2.self_distance", self_dist);
    report.set_bool("w2.pass", pass);
    std::cout << (pass ? "[PASS]" : "[FAIL]")
              << " Gaussian W2 closed form (diag vs full worst diff "
              << dsu::format_double(worst_diag) << ")\n";
    all_pass = all_pass && pass;
  }

  {  // Sliced W1 estimator vs the Gaussian closed form.
    dsu::RngStream rng(seed, "theory-sliced");
    dsu::DiagGaussian g1{{0.0, 0.5}, {1.0, 0.7}};
    dsu::DiagGaussian g2{{1.2, -0.3}, {0.4, 2.0}};
    const int64_t m = 10000;
    dsu::Tensor a = dsu::Tensor::zeros({m, 2}), b = dsu::Tensor::zeros({m, 2});
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t k = 0; k < 2; ++k) {
        a[i * 2 + k] = g1.mean[k] + std::sqrt(g1.variance[k]) * rng.normal();
        b[i * 2 + k] = g2.mean[k] + std::sqrt(g2.variance[k]) * rng.normal();
      }
    }
    dsu::RngStream pr = rng.split("projections");
    const double est = dsu::empirical_domain_distance(a, b, 256, pr);
    dsu::RngStream orac = rng.split("oracle");
    const double ref = dsu::gaussian_sliced_w1(g1, g2, 100000, orac);
    const double rel = std::abs(est - ref) / ref;
    const bool pass = rel < 0.10;
    report.set_double("sliced.empirical", est);
    report.set_double("sliced.closed_form", ref);
    report.set_double("sliced.rel_err", rel);
    report.set_bool("sliced.pass", pass);
    std::cout << (pass ? "[PASS]" : "[FAIL]")
              << " sliced W1 estimator vs Gaussian closed form (rel err "
              << dsu::format_double(rel) << ")\n";
    all_pass = all_pass && pass;
  }

  report.set_bool("all.pass", all_pass);
  std::filesystem::create_directories(out_dir);
  report.save(out_dir + "/theory_report.kv");
  std::cout << (all_pass ? "all checks passed\n" : "SOME CHECKS FAILED\n");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-statistic uncertainty training and "
               "inference-time statistic calibration, desk scale"};
  app.allow_extras();
  std::string config_path;
  app.add_option("--config", config_path, "key-value config file");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic domains");
  gen->allow_extras();
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "output directory");

  auto* tr = app.add_subcommand("train", "train one model on the LODO split");
  tr->allow_extras();
  std::string tr_data = "data", tr_out = "run";
  tr->add_option("--data", tr_data, "dataset directory");
  tr->add_option("--out", tr_out, "output directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one domain");
  ev->allow_extras();
  std::string ev_ckpt, ev_data = "data", ev_domain, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--domain", ev_domain, "domain id (default: held-out)");
  ev->add_option("--out", ev_out, "report file (optional)");

  auto* ab = app.add_subcommand("ablate", "hyperparameter and module sweeps");
  ab->allow_extras();
  std::string ab_data = "data", ab_out = "ablate", ab_which = "all";
  ab->add_option("--data", ab_data, "dataset directory");
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--which", ab_which, "p | positions | scope | modules | all");

  auto* rs = app.add_subcommand("report-stats",
                                "statistic discrepancy and domain distances");
  rs->allow_extras();
  std::string rs_ckpt, rs_data = "data", rs_out = "stats";
  rs->add_option("--checkpoint", rs_ckpt, "checkpoint file")->required();
  rs->add_option("--data", rs_data, "dataset directory");
  rs->add_option("--out", rs_out, "output directory");

  auto* vt = app.add_subcommand("verify-theory", "run the theory checks");
  vt->allow_extras();
  std::string vt_out = ".";
  vt->add_option("--out", vt_out, "output directory");

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    KvFile config = build_config(config_path, app.remaining(true));
    if (gen->parsed()) return cmd_gen_data(config, gen_out);
    if (tr->parsed()) return cmd_train(config, tr_data, tr_out);
    if (ev->parsed()) {
      return cmd_eval(config, ev_ckpt, ev_data, ev_domain, ev_out);
    }
    if (ab->parsed()) return cmd_ablate(config, ab_data, ab_out, ab_which);
    if (rs->parsed()) return cmd_report_stats(config, rs_ckpt, rs_data, rs_out);
    if (vt->parsed()) return cmd_verify_theory(config, vt_out);
    return 2;
  } catch (const dsu::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 10 + static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
