#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsu/rng.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// One domain's style: a per-channel affine transform a*x + t applied to the
/// shared class content, plus elementwise observation noise.
struct DomainSpec {
  std::string id;
  std::vector<double> scale;  // [C], > 0
  std::vector<double> shift;  // [C]
  double noise = 0.1;
};

/// Multi-domain classification task: shared class-conditional content
/// prototypes, styled per domain. Each class prototype is a per-channel mean
/// component plus a weaker within-channel pattern; the style transform
/// overwrites channel statistics, so only the pattern part survives a domain
/// change intact. Source styles are drawn inside a box; the held-out target
/// style is extrapolated outside the per-channel span of the source styles,
/// so the target shift is genuinely unseen.
struct TaskSpec {
  int64_t num_classes = 4;
  int64_t channels = 8;
  int64_t height = 4;
  int64_t width = 4;
  int64_t samples_per_domain_per_class = 500;
  int64_t num_sources = 3;
  double channel_signal = 0.6;       // class signal in per-channel means
  double pattern_signal = 0.3;       // class signal in within-channel patterns
  double content_spread = 1.0;       // within-class content std
  double noise = 0.1;                // per-domain observation noise
  double scale_lo = 0.75;            // source style scale range
  double scale_hi = 1.3;
  double shift_max = 1.2;            // source style shift range (+-)
  double target_shift_margin = 5.0;  // extrapolation beyond the source span
  double target_scale_factor = 2.0;  // multiplicative extrapolation
  uint64_t seed = 11;
  std::string target_id = "target";
  std::vector<DomainSpec> domains;   // filled from the knobs when empty
};

struct Dataset {
  std::string domain_id;
  Tensor x;                     // [N,C,H,W]
  std::vector<int64_t> labels;  // [N]

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

/// Builds task.domains (sources "d0".."dK" plus the extrapolated target)
/// deterministically from the style knobs and the seed. No-op when domains
/// are already present.
void materialize_domains(TaskSpec& task);

/// One labeled dataset per domain, deterministic under task.seed.
std::vector<Dataset> generate(TaskSpec& task);

struct LodoSplit {
  Dataset train;                 // all domains except held_out, concatenated
  Dataset test;                  // the held-out domain
  std::vector<Dataset> sources;  // the training domains, kept separate
};

LodoSplit lodo_split(const std::vector<Dataset>& sets,
                     const std::string& held_out);

Dataset concat(const std::vector<Dataset>& sets, const std::string& id);

void save_datasets(const std::string& dir, const TaskSpec& task,
                   const std::vector<Dataset>& sets);
struct LoadedData {
  TaskSpec task;
  std::vector<Dataset> sets;
};
LoadedData load_datasets(const std::string& dir);

}  // namespace dsu
