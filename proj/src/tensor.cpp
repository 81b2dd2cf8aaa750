#include "dsu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace dsu {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) {
      fail(ErrorCode::InvalidArgument,
           "dimension sizes must be positive, got " + shape_str(shape));
    }
  }
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> str(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) str[i - 1] = str[i] * s[i];
  return str;
}

// Strides of `in` viewed through `out` (shapes right-aligned); broadcast
// dimensions get stride 0.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto in_str = row_major_strides(in);
  std::vector<int64_t> str(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) {
    str[off + i] = (in[i] == out[off + i]) ? in_str[i] : 0;
  }
  return str;
}

// Iterates the output index space while tracking offsets into two
// broadcast operands. f(i, off_a, off_b).
template <typename F>
void walk2(const Shape& out, const std::vector<int64_t>& sa,
           const std::vector<int64_t>& sb, F&& f) {
  const int64_t n = numel(out);
  const size_t r = out.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename F>
void walk1(const Shape& out, const std::vector<int64_t>& sa, F&& f) {
  std::vector<int64_t> zero(out.size(), 0);
  walk2(out, sa, zero, [&](int64_t i, int64_t oa, int64_t) { f(i, oa); });
}

// Sums a gradient shaped `from` down to shape `to` (inverse of broadcasting).
std::vector<double> reduce_grad(std::span<const double> g, const Shape& from,
                                const Shape& to) {
  std::vector<double> r(static_cast<size_t>(numel(to)), 0.0);
  auto st = broadcast_strides(to, from);
  walk1(from, st, [&](int64_t i, int64_t ot) { r[ot] += g[i]; });
  return r;
}

Tape* result_tape(const Tensor& a, const Tensor& b) {
  if (a.traced() && b.traced() && a.tape() != b.tape()) {
    fail(ErrorCode::InvalidArgument,
         "operands are traced on different tapes");
  }
  return a.traced() ? a.tape() : b.tape();
}

Tensor make_result(Shape shape, std::vector<double> values, Tape* tape,
                   std::vector<int64_t> parents, PullFn pull) {
  Tensor out(std::move(shape), std::move(values));
  if (tape) {
    int64_t id = tape->record(std::move(parents), out.shape(), std::move(pull));
    out = tape->adopt(std::move(out), id);
  }
  return out;
}

struct BinaryPrep {
  Shape out_shape;
  std::vector<int64_t> sa, sb;
};

BinaryPrep prep_binary(const Tensor& a, const Tensor& b) {
  BinaryPrep p;
  p.out_shape = broadcast_shape(a.shape(), b.shape());
  p.sa = broadcast_strides(a.shape(), p.out_shape);
  p.sb = broadcast_strides(b.shape(), p.out_shape);
  return p;
}

// Parent bookkeeping shared by the binary ops: slots are assigned in order
// (a first if traced, then b).
struct BinaryParents {
  std::vector<int64_t> ids;
  int slot_a = -1, slot_b = -1;
};

BinaryParents binary_parents(const Tensor& a, const Tensor& b) {
  BinaryParents p;
  if (a.traced()) {
    p.slot_a = static_cast<int>(p.ids.size());
    p.ids.push_back(a.node());
  }
  if (b.traced()) {
    p.slot_b = static_cast<int>(p.ids.size());
    p.ids.push_back(b.node());
  }
  return p;
}

std::vector<int64_t> normalize_axes(const std::vector<int64_t>& axes,
                                    size_t rank) {
  std::vector<int64_t> r;
  if (axes.empty()) {
    r.resize(rank);
    std::iota(r.begin(), r.end(), 0);
    return r;
  }
  r = axes;
  for (int64_t& a : r) {
    if (a < 0) a += static_cast<int64_t>(rank);
    if (a < 0 || a >= static_cast<int64_t>(rank)) {
      fail(ErrorCode::InvalidArgument,
           "reduction axis " + std::to_string(a) + " out of range for rank " +
               std::to_string(rank));
    }
  }
  std::sort(r.begin(), r.end());
  r.erase(std::unique(r.begin(), r.end()), r.end());
  return r;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorCode::ShapeMismatch, "cannot broadcast " + shape_str(a) +
                                         " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape_valid(shape_);
  if (numel(shape_) != static_cast<int64_t>(values_.size())) {
    fail(ErrorCode::ShapeMismatch,
         "shape " + shape_str(shape_) + " wants " +
             std::to_string(numel(shape_)) + " values, got " +
             std::to_string(values_.size()));
  }
}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(numel(shape)), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(numel(shape)), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::random_normal(const Shape& shape, RngStream& rng) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

Tensor Tensor::random_uniform(const Shape& shape, double lo, double hi,
                              RngStream& rng) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

double Tensor::item() const {
  if (size() != 1) {
    fail(ErrorCode::InvalidArgument,
         "item() wants a 1-element tensor, got shape " + shape_str(shape_));
  }
  return values_[0];
}

Tensor Tensor::detach() const { return Tensor(shape_, values_); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

// ---- Tape -----------------------------------------------------------------

Tensor Tape::var(const Tensor& t) {
  Tensor v = t.detach();
  v.tape_ = this;
  v.node_ = record({}, v.shape(), PullFn{});
  return v;
}

int64_t Tape::record(std::vector<int64_t> parents, const Shape& shape,
                     PullFn pull) {
  nodes_.push_back(Node{std::move(parents), shape, std::move(pull)});
  return static_cast<int64_t>(nodes_.size()) - 1;
}

Tensor Tape::adopt(Tensor value, int64_t node) {
  value.tape_ = this;
  value.node_ = node;
  return value;
}

Gradients backward(const Tape& tape, const Tensor& scalar_output) {
  if (scalar_output.tape() != &tape || scalar_output.node() < 0) {
    fail(ErrorCode::NotOnTape, "output was not recorded on this tape");
  }
  if (scalar_output.size() != 1) {
    fail(ErrorCode::InvalidArgument,
         "backward wants a 1-element output, got shape " +
             shape_str(scalar_output.shape()));
  }
  Gradients g;
  g.tape_ = &tape;
  g.by_node_[scalar_output.node()] = {1.0};

  for (int64_t id = scalar_output.node(); id >= 0; --id) {
    auto it = g.by_node_.find(id);
    if (it == g.by_node_.end()) continue;
    const auto& node = tape.nodes_[static_cast<size_t>(id)];
    if (!node.pull) continue;  // leaf
    AccumFn accum = [&](size_t slot, std::vector<double>&& grad) {
      int64_t pid = node.parents.at(slot);
      auto& buf = g.by_node_[pid];
      if (buf.empty()) {
        buf = std::move(grad);
      } else {
        for (size_t i = 0; i < buf.size(); ++i) buf[i] += grad[i];
      }
    };
    node.pull(it->second, accum);
  }
  return g;
}

Tensor Gradients::at(const Tensor& input) const {
  if (input.tape() != tape_ || input.node() < 0) {
    fail(ErrorCode::NotOnTape, "gradient requested for an untraced tensor");
  }
  auto it = by_node_.find(input.node());
  if (it == by_node_.end() || it->second.empty()) {
    return Tensor::zeros(input.shape());
  }
  return Tensor(input.shape(), it->second);
}

bool Gradients::touched(const Tensor& input) const {
  auto it = by_node_.find(input.node());
  return it != by_node_.end() && !it->second.empty();
}

// ---- elementwise binaries -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto p = prep_binary(a, b);
  std::vector<double> v(static_cast<size_t>(numel(p.out_shape)));
  walk2(p.out_shape, p.sa, p.sb,
        [&](int64_t i, int64_t oa, int64_t ob) { v[i] = a[oa] + b[ob]; });
  Tape* t = result_tape(a, b);
  PullFn pull;
  auto par = binary_parents(a, b);
  if (t) {
    Shape os = p.out_shape, as = a.shape(), bs = b.shape();
    pull = [par, os, as, bs](std::span<const double> g, const AccumFn& acc) {
      if (par.slot_a >= 0) acc(par.slot_a, reduce_grad(g, os, as));
      if (par.slot_b >= 0) acc(par.slot_b, reduce_grad(g, os, bs));
    };
  }
  return make_result(p.out_shape, std::move(v), t, par.ids, std::move(pull));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto p = prep_binary(a, b);
  std::vector<double> v(static_cast<size_t>(numel(p.out_shape)));
  walk2(p.out_shape, p.sa, p.sb,
        [&](int64_t i, int64_t oa, int64_t ob) { v[i] = a[oa] - b[ob]; });
  Tape* t = result_tape(a, b);
  PullFn pull;
  auto par = binary_parents(a, b);
  if (t) {
    Shape os = p.out_shape, as = a.shape(), bs = b.shape();
    pull = [par, os, as, bs](std::span<const double> g, const AccumFn& acc) {
      if (par.slot_a >= 0) acc(par.slot_a, reduce_grad(g, os, as));
      if (par.slot_b >= 0) {
        std::vector<double> ng(g.begin(), g.end());
        for (double& x : ng) x = -x;
        acc(par.slot_b, reduce_grad(ng, os, bs));
      }
    };
  }
  return make_result(p.out_shape, std::move(v), t, par.ids, std::move(pull));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto p = prep_binary(a, b);
  std::vector<double> v(static_cast<size_t>(numel(p.out_shape)));
  walk2(p.out_shape, p.sa, p.sb,
        [&](int64_t i, int64_t oa, int64_t ob) { v[i] = a[oa] * b[ob]; });
  Tape* t = result_tape(a, b);
  PullFn pull;
  auto par = binary_parents(a, b);
  if (t) {
    // Fused multiply-and-reduce against the other operand's values.
    std::vector<double> av(a.data().begin(), a.data().end());
    std::vector<double> bv(b.data().begin(), b.data().end());
    Shape os = p.out_shape;
    auto sa = p.sa, sb = p.sb;
    pull = [=](std::span<const double> g, const AccumFn& acc) {
      if (par.slot_a >= 0) {
        std::vector<double> r(av.size(), 0.0);
        walk2(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          r[oa] += g[i] * bv[ob];
        });
        acc(par.slot_a, std::move(r));
      }
      if (par.slot_b >= 0) {
        std::vector<double> r(bv.size(), 0.0);
        walk2(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          r[ob] += g[i] * av[oa];
        });
        acc(par.slot_b, std::move(r));
      }
    };
  }
  return make_result(p.out_shape, std::move(v), t, par.ids, std::move(pull));
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (int64_t i = 0; i < b.size(); ++i) {
    if (b[i] == 0.0) {
      fail(ErrorCode::DomainViolation,
           "division by zero at flat index " + std::to_string(i));
    }
  }
  auto p = prep_binary(a, b);
  std::vector<double> v(static_cast<size_t>(numel(p.out_shape)));
  walk2(p.out_shape, p.sa, p.sb,
        [&](int64_t i, int64_t oa, int64_t ob) { v[i] = a[oa] / b[ob]; });
  Tape* t = result_tape(a, b);
  PullFn pull;
  auto par = binary_parents(a, b);
  if (t) {
    std::vector<double> av(a.data().begin(), a.data().end());
    std::vector<double> bv(b.data().begin(), b.data().end());
    Shape os = p.out_shape;
    auto sa = p.sa, sb = p.sb;
    pull = [=](std::span<const double> g, const AccumFn& acc) {
      if (par.slot_a >= 0) {
        std::vector<double> r(av.size(), 0.0);
        walk2(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          r[oa] += g[i] / bv[ob];
        });
        acc(par.slot_a, std::move(r));
      }
      if (par.slot_b >= 0) {
        std::vector<double> r(bv.size(), 0.0);
        walk2(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          r[ob] -= g[i] * av[oa] / (bv[ob] * bv[ob]);
        });
        acc(par.slot_b, std::move(r));
      }
    };
  }
  return make_result(p.out_shape, std::move(v), t, par.ids, std::move(pull));
}

// ---- unaries --------------------------------------------------------------

namespace {

// dvalue(x, y) is d(op)/dx given input x and output y.
Tensor unary_op(const Tensor& x, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dvalue) {
  std::vector<double> v(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) v[i] = f(x[i]);
  PullFn pull;
  std::vector<int64_t> parents;
  if (x.traced()) {
    parents.push_back(x.node());
    std::vector<double> xv(x.data().begin(), x.data().end());
    std::vector<double> yv = v;
    pull = [xv = std::move(xv), yv = std::move(yv),
            dvalue](std::span<const double> g, const AccumFn& acc) {
      std::vector<double> r(xv.size());
      for (size_t i = 0; i < xv.size(); ++i) r[i] = g[i] * dvalue(xv[i], yv[i]);
      acc(0, std::move(r));
    };
  }
  return make_result(x.shape(), std::move(v), x.tape(), std::move(parents),
                     std::move(pull));
}

}  // namespace

Tensor neg(const Tensor& x) {
  return unary_op(x, [](double v) { return -v; },
                  [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& x) {
  // Subgradient at 0 is 0.
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (int64_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) {
      fail(ErrorCode::DomainViolation,
           "log of non-positive value at flat index " + std::to_string(i));
    }
  }
  return unary_op(x, [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  for (int64_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) {
      fail(ErrorCode::DomainViolation,
           "sqrt of negative value at flat index " + std::to_string(i));
    }
  }
  return unary_op(x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) { return mul(x, x); }

// ---- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "matmul wants [M,K]x[K,N], got " +
                                       shape_str(a.shape()) + " x " +
                                       shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n), 0.0);
  const auto av = a.data(), bv = b.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = &bv[kk * n];
      double* orow = &v[i * n];
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  Tape* t = result_tape(a, b);
  PullFn pull;
  auto par = binary_parents(a, b);
  if (t) {
    std::vector<double> ac(av.begin(), av.end());
    std::vector<double> bc(bv.begin(), bv.end());
    pull = [par, ac = std::move(ac), bc = std::move(bc), m, k,
            n](std::span<const double> g, const AccumFn& acc) {
      if (par.slot_a >= 0) {
        std::vector<double> da(static_cast<size_t>(m * k), 0.0);  // G * B^T
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (int64_t kk = 0; kk < k; ++kk)
              da[i * k + kk] += gij * bc[kk * n + j];
          }
        acc(par.slot_a, std::move(da));
      }
      if (par.slot_b >= 0) {
        std::vector<double> db(static_cast<size_t>(k * n), 0.0);  // A^T * G
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = ac[i * k + kk];
            for (int64_t j = 0; j < n; ++j)
              db[kk * n + j] += aik * g[i * n + j];
          }
        acc(par.slot_b, std::move(db));
      }
    };
  }
  return make_result({m, n}, std::move(v), t, par.ids, std::move(pull));
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims) {
  auto ax = normalize_axes(axes, x.rank());
  Shape keep = x.shape();
  for (int64_t a : ax) keep[static_cast<size_t>(a)] = 1;
  Shape out_shape;
  if (keepdims) {
    out_shape = keep;
  } else {
    for (size_t i = 0; i < x.rank(); ++i) {
      if (!std::binary_search(ax.begin(), ax.end(), static_cast<int64_t>(i)))
        out_shape.push_back(x.shape()[i]);
    }
    if (out_shape.empty()) out_shape = {1};
  }
  auto st = broadcast_strides(keep, x.shape());
  std::vector<double> v(static_cast<size_t>(numel(out_shape)), 0.0);
  walk1(x.shape(), st, [&](int64_t i, int64_t o) { v[o] += x[i]; });
  PullFn pull;
  std::vector<int64_t> parents;
  if (x.traced()) {
    parents.push_back(x.node());
    Shape xs = x.shape();
    pull = [xs, st](std::span<const double> g, const AccumFn& acc) {
      std::vector<double> r(static_cast<size_t>(numel(xs)));
      walk1(xs, st, [&](int64_t i, int64_t o) { r[i] = g[o]; });
      acc(0, std::move(r));
    };
  }
  return make_result(out_shape, std::move(v), x.tape(), std::move(parents),
                     std::move(pull));
}

Tensor mean(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims) {
  auto ax = normalize_axes(axes, x.rank());
  int64_t count = 1;
  for (int64_t a : ax) count *= x.shape()[static_cast<size_t>(a)];
  return sum(x, axes, keepdims) * (1.0 / static_cast<double>(count));
}

Tensor variance(const Tensor& x, const std::vector<int64_t>& axes,
                bool keepdims) {
  Tensor m = mean(x, axes, /*keepdims=*/true);
  Tensor d = sub(x, m);
  return mean(mul(d, d), axes, keepdims);
}

// ---- shape ops ------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_shape_valid(shape);
  if (numel(shape) != x.size()) {
    fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_str(x.shape()) +
                                       " to " + shape_str(shape));
  }
  std::vector<double> v(x.data().begin(), x.data().end());
  PullFn pull;
  std::vector<int64_t> parents;
  if (x.traced()) {
    parents.push_back(x.node());
    pull = [](std::span<const double> g, const AccumFn& acc) {
      acc(0, std::vector<double>(g.begin(), g.end()));
    };
  }
  return make_result(shape, std::move(v), x.tape(), std::move(parents),
                     std::move(pull));
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  Shape check = broadcast_shape(x.shape(), shape);
  if (check != shape) {
    fail(ErrorCode::ShapeMismatch, "cannot broadcast " + shape_str(x.shape()) +
                                       " to " + shape_str(shape));
  }
  auto st = broadcast_strides(x.shape(), shape);
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  walk1(shape, st, [&](int64_t i, int64_t o) { v[i] = x[o]; });
  PullFn pull;
  std::vector<int64_t> parents;
  if (x.traced()) {
    parents.push_back(x.node());
    Shape os = shape, xs = x.shape();
    pull = [os, xs](std::span<const double> g, const AccumFn& acc) {
      acc(0, reduce_grad(g, os, xs));
    };
  }
  return make_result(shape, std::move(v), x.tape(), std::move(parents),
                     std::move(pull));
}

// ---- losses ---------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels) {
  if (logits.rank() != 2) {
    fail(ErrorCode::ShapeMismatch,
         "softmax_cross_entropy wants [B,K] logits, got " +
             shape_str(logits.shape()));
  }
  const int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b) {
    fail(ErrorCode::ShapeMismatch,
         "labels size " + std::to_string(labels.size()) +
             " does not match batch " + std::to_string(b));
  }
  for (int64_t lbl : labels) {
    if (lbl < 0 || lbl >= k) {
      fail(ErrorCode::InvalidArgument,
           "label " + std::to_string(lbl) + " out of range [0, " +
               std::to_string(k) + ")");
    }
  }
  std::vector<double> probs(static_cast<size_t>(b * k));
  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const double* row = &logits.data()[i * k];
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(b);
  PullFn pull;
  std::vector<int64_t> parents;
  if (logits.traced()) {
    parents.push_back(logits.node());
    pull = [probs = std::move(probs), labels, b,
            k](std::span<const double> g, const AccumFn& acc) {
      std::vector<double> r(static_cast<size_t>(b * k));
      const double scale = g[0] / static_cast<double>(b);
      for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          double onehot = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          r[i * k + j] = scale * (probs[i * k + j] - onehot);
        }
      }
      acc(0, std::move(r));
    };
  }
  return make_result({1}, {loss}, logits.tape(), std::move(parents),
                     std::move(pull));
}

Tensor squared_error(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    fail(ErrorCode::ShapeMismatch, "squared_error wants matching shapes, got " +
                                       shape_str(pred.shape()) + " vs " +
                                       shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

// ---- finite differences ---------------------------------------------------

Tensor finite_difference_gradient(
    const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) {
    fail(ErrorCode::InvalidArgument, "finite difference step must be > 0");
  }
  Tensor g = Tensor::zeros(x.shape());
  Tensor probe = x.detach();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorCode::NonFinite,
           "objective returned a non-finite value at element " +
               std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace dsu
