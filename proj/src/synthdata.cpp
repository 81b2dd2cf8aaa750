#include "dsu/synthdata.hpp"

#include <algorithm>
#include <filesystem>

#include "dsu/serialize.hpp"

namespace dsu {

namespace {

void validate(const TaskSpec& task) {
  if (task.num_classes < 2) {
    fail(ErrorCode::InvalidArgument, "need at least 2 classes");
  }
  if (task.channels < 1 || task.height < 1 || task.width < 1) {
    fail(ErrorCode::InvalidArgument, "feature dimensions must be positive");
  }
  if (task.samples_per_domain_per_class < 1) {
    fail(ErrorCode::InvalidArgument, "need at least 1 sample per class");
  }
  if (static_cast<int64_t>(task.domains.size()) < 3) {
    fail(ErrorCode::InvalidArgument,
         "need at least 2 source domains plus a target");
  }
  bool has_target = false;
  for (const auto& d : task.domains) {
    if (static_cast<int64_t>(d.scale.size()) != task.channels ||
        static_cast<int64_t>(d.shift.size()) != task.channels) {
      fail(ErrorCode::ShapeMismatch,
           "domain '" + d.id + "' style vectors do not match channel count");
    }
    for (double a : d.scale) {
      if (!(a > 0.0)) {
        fail(ErrorCode::DomainViolation,
             "domain '" + d.id + "' has a non-positive style scale");
      }
    }
    if (d.id == task.target_id) has_target = true;
  }
  if (!has_target) {
    fail(ErrorCode::InvalidArgument,
         "target domain '" + task.target_id + "' not present");
  }
}

}  // namespace

void materialize_domains(TaskSpec& task) {
  if (!task.domains.empty()) return;
  if (task.num_sources < 2) {
    fail(ErrorCode::InvalidArgument, "need at least 2 source domains");
  }
  RngStream rng = RngStream(task.seed, "synthdata").split("styles");
  const size_t c = static_cast<size_t>(task.channels);
  for (int64_t s = 0; s < task.num_sources; ++s) {
    DomainSpec d;
    d.id = "d" + std::to_string(s);
    d.noise = task.noise;
    RngStream sr = rng.split(d.id);
    d.scale.resize(c);
    d.shift.resize(c);
    for (size_t i = 0; i < c; ++i) {
      d.scale[i] = sr.uniform(task.scale_lo, task.scale_hi);
    }
    for (size_t i = 0; i < c; ++i) {
      d.shift[i] = sr.uniform(-task.shift_max, task.shift_max);
    }
    task.domains.push_back(std::move(d));
  }

  // The target sits outside the per-channel span of the source styles:
  // shifts extrapolate past the min/max source shift by margin * span,
  // scales extrapolate multiplicatively past the extreme source scale.
  DomainSpec t;
  t.id = task.target_id;
  t.noise = task.noise;
  RngStream tr = rng.split("extrapolated-target");
  t.scale.resize(c);
  t.shift.resize(c);
  for (size_t i = 0; i < c; ++i) {
    double lo = task.domains[0].shift[i], hi = lo;
    double slo = task.domains[0].scale[i], shi = slo;
    for (int64_t s = 1; s < task.num_sources; ++s) {
      lo = std::min(lo, task.domains[static_cast<size_t>(s)].shift[i]);
      hi = std::max(hi, task.domains[static_cast<size_t>(s)].shift[i]);
      slo = std::min(slo, task.domains[static_cast<size_t>(s)].scale[i]);
      shi = std::max(shi, task.domains[static_cast<size_t>(s)].scale[i]);
    }
    const double span = std::max(hi - lo, 0.25);
    const bool up = tr.uniform() < 0.5;
    t.shift[i] = up ? hi + task.target_shift_margin * span
                    : lo - task.target_shift_margin * span;
    t.scale[i] = up ? shi * task.target_scale_factor
                    : slo / task.target_scale_factor;
  }
  task.domains.push_back(std::move(t));
}

std::vector<Dataset> generate(TaskSpec& task) {
  materialize_domains(task);
  validate(task);
  RngStream root(task.seed, "synthdata");
  const int64_t c = task.channels, h = task.height, w = task.width;
  const int64_t hw = h * w;
  const int64_t per_class = task.samples_per_domain_per_class;

  // Shared class content prototypes [K,C,H,W]: a per-channel mean component
  // plus a within-channel pattern. The mean component sits exactly in the
  // statistics a domain style overwrites; the pattern survives any
  // per-channel affine up to scale.
  RngStream proto_rng = root.split("prototypes");
  Tensor chan_mean = Tensor::random_normal({task.num_classes, c}, proto_rng);
  Tensor pattern = Tensor::random_normal({task.num_classes, c, h, w},
                                         proto_rng);
  Tensor prototypes = Tensor::zeros({task.num_classes, c, h, w});
  for (int64_t k = 0; k < task.num_classes; ++k) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double m = task.channel_signal * chan_mean[k * c + ch];
      for (int64_t i = 0; i < hw; ++i) {
        const int64_t at = (k * c + ch) * hw + i;
        prototypes[at] = m + task.pattern_signal * pattern[at];
      }
    }
  }

  std::vector<Dataset> sets;
  for (const auto& dom : task.domains) {
    Dataset ds;
    ds.domain_id = dom.id;
    const int64_t n = task.num_classes * per_class;
    ds.x = Tensor::zeros({n, c, h, w});
    ds.labels.resize(static_cast<size_t>(n));
    RngStream drng = root.split("domain").split(dom.id);
    int64_t row = 0;
    for (int64_t k = 0; k < task.num_classes; ++k) {
      RngStream crng = drng.split(static_cast<uint64_t>(k));
      for (int64_t s = 0; s < per_class; ++s) {
        double* out = &ds.x.data()[row * c * hw];
        const double* proto = &prototypes.data()[k * c * hw];
        for (int64_t i = 0; i < c * hw; ++i) {
          out[i] = proto[i] + task.content_spread * crng.normal();
        }
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t i = 0; i < hw; ++i) {
            out[ch * hw + i] = dom.scale[static_cast<size_t>(ch)] *
                                   out[ch * hw + i] +
                               dom.shift[static_cast<size_t>(ch)];
          }
        }
        if (dom.noise > 0.0) {
          for (int64_t i = 0; i < c * hw; ++i) {
            out[i] += dom.noise * crng.normal();
          }
        }
        ds.labels[static_cast<size_t>(row)] = k;
        ++row;
      }
    }
    sets.push_back(std::move(ds));
  }
  return sets;
}

Dataset concat(const std::vector<Dataset>& sets, const std::string& id) {
  if (sets.empty()) fail(ErrorCode::EmptyInput, "no datasets to concatenate");
  Shape inner = sets[0].x.shape();
  int64_t total = 0;
  for (const auto& s : sets) {
    if (s.x.rank() != inner.size() ||
        !std::equal(inner.begin() + 1, inner.end(), s.x.shape().begin() + 1)) {
      fail(ErrorCode::ShapeMismatch, "datasets have mismatched feature shapes");
    }
    total += s.size();
  }
  Shape out_shape = inner;
  out_shape[0] = total;
  Dataset out;
  out.domain_id = id;
  out.x = Tensor::zeros(out_shape);
  out.labels.reserve(static_cast<size_t>(total));
  int64_t offset = 0;
  for (const auto& s : sets) {
    std::copy(s.x.data().begin(), s.x.data().end(),
              out.x.data().begin() + offset);
    offset += s.x.size();
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  return out;
}

LodoSplit lodo_split(const std::vector<Dataset>& sets,
                     const std::string& held_out) {
  LodoSplit split;
  bool found = false;
  for (const auto& s : sets) {
    if (s.domain_id == held_out) {
      split.test = s;
      found = true;
    } else {
      split.sources.push_back(s);
    }
  }
  if (!found) {
    fail(ErrorCode::InvalidArgument, "unknown domain '" + held_out + "'");
  }
  if (split.sources.empty()) {
    fail(ErrorCode::EmptyInput, "no training domains left after holding out '" +
                                    held_out + "'");
  }
  split.train = concat(split.sources, "train");
  return split;
}

void save_datasets(const std::string& dir, const TaskSpec& task,
                   const std::vector<Dataset>& sets) {
  std::filesystem::create_directories(dir);
  KvFile m;
  m.set_int("task.classes", task.num_classes);
  m.set_int("task.channels", task.channels);
  m.set_int("task.height", task.height);
  m.set_int("task.width", task.width);
  m.set_int("task.samples_per_domain_per_class",
            task.samples_per_domain_per_class);
  m.set_int("task.seed", static_cast<int64_t>(task.seed));
  m.set_string("task.target", task.target_id);
  std::vector<std::string> ids;
  for (const auto& s : sets) ids.push_back(s.domain_id);
  m.set_string_list("domains", ids);
  for (const auto& s : sets) {
    const std::string p = "domain." + s.domain_id + ".";
    m.set_string(p + "file", s.domain_id + ".tnsr");
    m.set_int(p + "count", s.size());
    m.set_int_list(p + "labels", s.labels);
    const auto* spec = &task.domains[0];
    for (const auto& d : task.domains) {
      if (d.id == s.domain_id) spec = &d;
    }
    m.set_double_list(p + "style_scale", spec->scale);
    m.set_double_list(p + "style_shift", spec->shift);
    m.set_double(p + "noise", spec->noise);
    write_tnsr(dir + "/" + s.domain_id + ".tnsr", s.x);
  }
  m.save(dir + "/manifest.kv");
}

LoadedData load_datasets(const std::string& dir) {
  LoadedData out;
  KvFile m = KvFile::load(dir + "/manifest.kv");
  out.task.num_classes = m.get_int("task.classes");
  out.task.channels = m.get_int("task.channels");
  out.task.height = m.get_int("task.height");
  out.task.width = m.get_int("task.width");
  out.task.samples_per_domain_per_class =
      m.get_int("task.samples_per_domain_per_class");
  out.task.seed = static_cast<uint64_t>(m.get_int("task.seed"));
  out.task.target_id = m.get_string("task.target");
  for (const auto& id : m.get_string_list("domains")) {
    const std::string p = "domain." + id + ".";
    Dataset ds;
    ds.domain_id = id;
    ds.x = read_tnsr(dir + "/" + m.get_string(p + "file"));
    ds.labels = m.get_int_list(p + "labels");
    if (ds.x.dim(0) != ds.size()) {
      fail(ErrorCode::Config, "label count does not match tensor for '" + id +
                                  "' in " + dir);
    }
    DomainSpec spec;
    spec.id = id;
    spec.scale = m.get_double_list(p + "style_scale");
    spec.shift = m.get_double_list(p + "style_shift");
    spec.noise = m.get_double(p + "noise");
    out.task.domains.push_back(std::move(spec));
    out.sets.push_back(std::move(ds));
  }
  return out;
}

}  // namespace dsu
