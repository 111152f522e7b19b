#pragma once

// Reverse-mode automatic differentiation on dense row-major tensors.
// Forward ops optionally record a backward closure on a Tape; calling
// Tape::backward replays the closures in reverse and accumulates
// gradients into every tensor that requires them.  Inference runs the
// same ops with a null tape.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "lw/common.hpp"
#include "lw/kernels.hpp"

namespace lw::ag {

template <class Real>
class Tape;

template <class Real>
struct Storage {
  std::vector<int> shape;
  std::vector<Real> v;
  std::vector<Real> g;  // allocated on first use
  bool requires_grad = false;
  const Tape<Real>* produced_by = nullptr;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

template <class Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    for (int d : shape)
      if (d <= 0) throw ValidationError("tensor dimensions must be positive, got " + shape_str(shape));
    Tensor t;
    t.st_ = std::make_shared<Storage<Real>>();
    t.st_->shape = std::move(shape);
    t.st_->v.assign(shape_numel(t.st_->shape), Real(0));
    t.st_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<Real> values,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (values.size() != t.numel())
      throw ValidationError("value count does not match shape " + shape_str(t.shape()));
    t.st_->v = std::move(values);
    return t;
  }

  static Tensor scalar(Real value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(st_); }
  const std::vector<int>& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return st_->v.size(); }

  std::vector<Real>& values() { return st_->v; }
  const std::vector<Real>& values() const { return st_->v; }

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::vector<Real>& grad() {
    if (st_->g.empty()) st_->g.assign(st_->v.size(), Real(0));
    return st_->g;
  }
  bool has_grad() const { return !st_->g.empty(); }
  void clear_grad() { st_->g.clear(); }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool b) { st_->requires_grad = b; }

  /// True if gradients should flow into or through this tensor.
  bool needs_grad() const {
    return st_->requires_grad || st_->produced_by != nullptr;
  }

  Real item() const {
    if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str(shape()));
    return st_->v[0];
  }

  std::shared_ptr<Storage<Real>> st_;
};

template <class Real>
class Tape {
 public:
  /// Records a backward closure for an op just executed.
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss)=1, replays recorded closures in reverse to
  /// accumulate gradients, then clears the tape.  The target must be a
  /// scalar produced by ops recorded on this tape.
  void backward(Tensor<Real> loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ValidationError("backward target must be a scalar tensor");
    if (loss.st_->produced_by != this)
      throw ValidationError("backward target was not produced on this tape");
    loss.grad()[0] = Real(1);
    for (std::size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1]();
    clear();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <class Real>
void mark(Tape<Real>* tape, Tensor<Real>& out) {
  out.st_->produced_by = tape;
}

template <class Real>
bool wants(Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> inputs) {
  if (!tape) return false;
  for (const Tensor<Real>* t : inputs)
    if (t->needs_grad()) return true;
  return false;
}

/// Gradient flowing out of `out`, or null if nothing downstream used it.
template <class Real>
const std::vector<Real>* out_grad(const Tensor<Real>& out) {
  return out.st_->g.empty() ? nullptr : &out.st_->g;
}

inline void check_same_shape(const std::vector<int>& a, const std::vector<int>& b,
                             const char* op) {
  if (a != b)
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a) +
                          " vs " + shape_str(b));
}

}  // namespace detail

// ---- elementwise ----

template <class Real>
Tensor<Real> add(Tape<Real>* tape, Tensor<Real> a, Tensor<Real> b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (detail::wants(tape, {&a, &b})) {
    detail::mark(tape, out);
    tape->record([out, a, b]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      if (a.needs_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (b.needs_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sub(Tape<Real>* tape, Tensor<Real> a, Tensor<Real> b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (detail::wants(tape, {&a, &b})) {
    detail::mark(tape, out);
    tape->record([out, a, b]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      if (a.needs_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (b.needs_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(Tape<Real>* tape, Tensor<Real> a, Tensor<Real> b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (detail::wants(tape, {&a, &b})) {
    detail::mark(tape, out);
    tape->record([out, a, b]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      if (a.needs_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * b.values()[i];
      }
      if (b.needs_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * a.values()[i];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(Tape<Real>* tape, Tensor<Real> a, Real s) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * s;
  if (detail::wants(tape, {&a})) {
    detail::mark(tape, out);
    tape->record([out, a, s]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * s;
    });
  }
  return out;
}

/// a + b where b's shape is a suffix of a's shape (e.g. adding a (T, D)
/// positional table onto an (L, T, D) batch, or a (D,) bias onto rows).
template <class Real>
Tensor<Real> add_broadcast(Tape<Real>* tape, Tensor<Real> a, Tensor<Real> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool suffix = bs.size() <= as.size();
  if (suffix)
    for (std::size_t i = 0; i < bs.size(); ++i)
      if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) suffix = false;
  if (!suffix)
    throw ValidationError("add_broadcast: " + shape_str(bs) +
                          " is not a trailing suffix of " + shape_str(as));
  Tensor<Real> out = Tensor<Real>::zeros(as);
  const std::size_t nb = b.numel();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.values()[i] = a.values()[i] + b.values()[i % nb];
  if (detail::wants(tape, {&a, &b})) {
    detail::mark(tape, out);
    tape->record([out, a, b, nb]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      if (a.needs_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (b.needs_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g->size(); ++i) gb[i % nb] += (*g)[i];
      }
    });
  }
  return out;
}

// ---- linear algebra ----

/// a @ b.  b must be 2-D; a's leading dimensions are treated as batch,
/// i.e. (..., M, K) @ (K, N) -> (..., M, N).
template <class Real>
Tensor<Real> matmul(Tape<Real>* tape, Tensor<Real> a, Tensor<Real> b) {
  if (a.rank() < 2 || b.rank() != 2)
    throw ValidationError("matmul: need (..., M, K) @ (K, N), got " +
                          shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int inner = a.dim(a.rank() - 1);
  if (inner != b.dim(0))
    throw ValidationError("matmul: inner dimensions disagree, " +
                          shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int cols = b.dim(1);
  const int rows = static_cast<int>(a.numel()) / inner;
  std::vector<int> out_shape = a.shape();
  out_shape.back() = cols;
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  kern::matmul_nn(a.values().data(), b.values().data(), out.values().data(),
                  rows, inner, cols, false);
  if (detail::wants(tape, {&a, &b})) {
    detail::mark(tape, out);
    tape->record([out, a, b, rows, inner, cols]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      if (a.needs_grad())
        kern::matmul_nt(g->data(), b.values().data(), a.grad().data(), rows,
                        cols, inner, true);
      if (b.needs_grad())
        kern::matmul_tn(a.values().data(), g->data(), b.grad().data(), inner,
                        rows, cols, true);
    });
  }
  return out;
}

// ---- activations / normalization ----

template <class Real>
Tensor<Real> softmax_lastdim(Tape<Real>* tape, Tensor<Real> x) {
  if (x.rank() < 1) throw ValidationError("softmax_lastdim: rank >= 1 required");
  const int width = x.dim(x.rank() - 1);
  const int rows = static_cast<int>(x.numel()) / width;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  kern::softmax_rows(x.values().data(), out.values().data(), rows, width);
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x, rows, width]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      const auto& p = out.values();
      kern::parallel_for(rows, [&](int r) {
        const long base = static_cast<long>(r) * width;
        Real dot = Real(0);
        for (int j = 0; j < width; ++j) dot += (*g)[base + j] * p[base + j];
        for (int j = 0; j < width; ++j)
          gx[base + j] += p[base + j] * ((*g)[base + j] - dot);
      });
    });
  }
  return out;
}

template <class Real>
Tensor<Real> layer_norm(Tape<Real>* tape, Tensor<Real> x, Tensor<Real> gain,
                        Tensor<Real> bias, Real eps) {
  if (x.rank() < 1) throw ValidationError("layer_norm: rank >= 1 required");
  const int width = x.dim(x.rank() - 1);
  if (gain.shape() != std::vector<int>{width} || bias.shape() != std::vector<int>{width})
    throw ValidationError("layer_norm: gain/bias must have shape (" +
                          std::to_string(width) + ")");
  const int rows = static_cast<int>(x.numel()) / width;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  auto mean = std::make_shared<std::vector<Real>>(rows);
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  kern::layernorm_rows(x.values().data(), gain.values().data(),
                       bias.values().data(), out.values().data(), mean->data(),
                       rstd->data(), rows, width, eps);
  if (detail::wants(tape, {&x, &gain, &bias})) {
    detail::mark(tape, out);
    tape->record([out, x, gain, bias, mean, rstd, rows, width]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      std::vector<Real> scratch_x, scratch_g, scratch_b;
      Real* gx;
      Real* ggain;
      Real* gbias;
      if (x.needs_grad()) {
        gx = x.grad().data();
      } else {
        scratch_x.assign(x.numel(), Real(0));
        gx = scratch_x.data();
      }
      if (gain.needs_grad()) {
        ggain = gain.grad().data();
      } else {
        scratch_g.assign(gain.numel(), Real(0));
        ggain = scratch_g.data();
      }
      if (bias.needs_grad()) {
        gbias = bias.grad().data();
      } else {
        scratch_b.assign(bias.numel(), Real(0));
        gbias = scratch_b.data();
      }
      kern::layernorm_backward_rows(x.values().data(), gain.values().data(),
                                    mean->data(), rstd->data(), g->data(), gx,
                                    ggain, gbias, rows, width);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> gelu(Tape<Real>* tape, Tensor<Real> x) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  kern::gelu(x.values().data(), out.values().data(),
             static_cast<long>(x.numel()));
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      kern::gelu_backward(x.values().data(), g->data(), x.grad().data(),
                          static_cast<long>(x.numel()));
    });
  }
  return out;
}

template <class Real>
Tensor<Real> tanh(Tape<Real>* tape, Tensor<Real> x) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::tanh(x.values()[i]);
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      const auto& y = out.values();
      for (std::size_t i = 0; i < g->size(); ++i)
        gx[i] += (*g)[i] * (Real(1) - y[i] * y[i]);
    });
  }
  return out;
}

// ---- structure ----

/// Same data, new shape (element count must match).
template <class Real>
Tensor<Real> reshape(Tape<Real>* tape, Tensor<Real> x, std::vector<int> new_shape) {
  Tensor<Real> out = Tensor<Real>::zeros(std::move(new_shape));
  if (out.numel() != x.numel())
    throw ValidationError("reshape: element count mismatch, " +
                          shape_str(x.shape()) + " -> " + shape_str(out.shape()));
  out.values() = x.values();
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
    });
  }
  return out;
}

/// rows of x (all but the last axis) whose mask entry is 0 become zero
/// vectors; mask has one entry per row.
template <class Real>
Tensor<Real> mask_rows(Tape<Real>* tape, Tensor<Real> x,
                       std::vector<std::uint8_t> mask) {
  if (x.rank() < 1) throw ValidationError("mask_rows: rank >= 1 required");
  const int width = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(width);
  if (mask.size() != rows)
    throw ValidationError("mask_rows: mask size " + std::to_string(mask.size()) +
                          " does not match row count " + std::to_string(rows));
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const std::size_t base = r * static_cast<std::size_t>(width);
    for (int j = 0; j < width; ++j) out.values()[base + j] = x.values()[base + j];
  }
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    auto m = std::make_shared<std::vector<std::uint8_t>>(std::move(mask));
    tape->record([out, x, m, rows, width]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!(*m)[r]) continue;
        const std::size_t base = r * static_cast<std::size_t>(width);
        for (int j = 0; j < width; ++j) gx[base + j] += (*g)[base + j];
      }
    });
  }
  return out;
}

/// Mean over the second-to-last axis, restricted to masked-in slots.
/// x: (..., S, D), mask: one entry per (..., S) slot; groups whose mask
/// is entirely zero produce a zero vector.
template <class Real>
Tensor<Real> masked_mean(Tape<Real>* tape, Tensor<Real> x,
                         std::vector<std::uint8_t> mask) {
  if (x.rank() < 2) throw ValidationError("masked_mean: rank >= 2 required");
  const int width = x.dim(x.rank() - 1);
  const int slots = x.dim(x.rank() - 2);
  const std::size_t groups = x.numel() / static_cast<std::size_t>(width * slots);
  if (mask.size() != groups * static_cast<std::size_t>(slots))
    throw ValidationError("masked_mean: mask size does not match slot count");
  std::vector<int> out_shape = x.shape();
  out_shape.erase(out_shape.end() - 2);
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    int cnt = 0;
    for (int s = 0; s < slots; ++s) cnt += mask[gidx * slots + s] ? 1 : 0;
    if (cnt == 0) continue;
    const std::size_t obase = gidx * static_cast<std::size_t>(width);
    for (int s = 0; s < slots; ++s) {
      if (!mask[gidx * slots + s]) continue;
      const std::size_t xbase = (gidx * slots + s) * static_cast<std::size_t>(width);
      for (int j = 0; j < width; ++j) out.values()[obase + j] += x.values()[xbase + j];
    }
    for (int j = 0; j < width; ++j) out.values()[obase + j] /= Real(cnt);
  }
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    auto m = std::make_shared<std::vector<std::uint8_t>>(std::move(mask));
    tape->record([out, x, m, groups, slots, width]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        int cnt = 0;
        for (int s = 0; s < slots; ++s) cnt += (*m)[gidx * slots + s] ? 1 : 0;
        if (cnt == 0) continue;
        const std::size_t obase = gidx * static_cast<std::size_t>(width);
        for (int s = 0; s < slots; ++s) {
          if (!(*m)[gidx * slots + s]) continue;
          const std::size_t xbase = (gidx * slots + s) * static_cast<std::size_t>(width);
          for (int j = 0; j < width; ++j)
            gx[xbase + j] += (*g)[obase + j] / Real(cnt);
        }
      }
    });
  }
  return out;
}

/// Row lookup into an embedding table: ids index rows of table (V, D);
/// the result has shape id_shape + (D,).
template <class Real>
Tensor<Real> embedding_lookup(Tape<Real>* tape, Tensor<Real> table,
                              const std::vector<std::int32_t>& ids,
                              std::vector<int> id_shape) {
  if (table.rank() != 2) throw ValidationError("embedding_lookup: table must be 2-D");
  if (ids.size() != shape_numel(id_shape))
    throw ValidationError("embedding_lookup: id count does not match id shape");
  const int vocab = table.dim(0);
  const int width = table.dim(1);
  for (std::int32_t id : ids)
    if (id < 0 || id >= vocab)
      throw ValidationError("embedding_lookup: id " + std::to_string(id) +
                            " outside table of " + std::to_string(vocab) + " rows");
  std::vector<int> out_shape = std::move(id_shape);
  out_shape.push_back(width);
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t src = static_cast<std::size_t>(ids[i]) * width;
    const std::size_t dst = i * static_cast<std::size_t>(width);
    for (int j = 0; j < width; ++j) out.values()[dst + j] = table.values()[src + j];
  }
  if (detail::wants(tape, {&table})) {
    detail::mark(tape, out);
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
    tape->record([out, table, ids_copy, width]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gt = table.grad();
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        const std::size_t dst = static_cast<std::size_t>((*ids_copy)[i]) * width;
        const std::size_t src = i * static_cast<std::size_t>(width);
        for (int j = 0; j < width; ++j) gt[dst + j] += (*g)[src + j];
      }
    });
  }
  return out;
}

/// Inverted dropout: keeps each element with probability 1-p and scales
/// survivors by 1/(1-p) so the expectation is unchanged.  Identity when
/// not training or p == 0.
template <class Real>
Tensor<Real> dropout(Tape<Real>* tape, Tensor<Real> x, double p, bool training,
                     Rng* rng) {
  if (p < 0.0 || p >= 1.0)
    throw ValidationError("dropout: probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  if (!rng) throw ValidationError("dropout: rng required when training");
  auto mask = std::make_shared<std::vector<Real>>(x.numel());
  const Real keep_scale = Real(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask->size(); ++i)
    (*mask)[i] = uniform01(*rng) < p ? Real(0) : keep_scale;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out.values()[i] = x.values()[i] * (*mask)[i];
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x, mask]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i] * (*mask)[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sum_all(Tape<Real>* tape, Tensor<Real> x) {
  Real s = Real(0);
  for (Real v : x.values()) s += v;
  Tensor<Real> out = Tensor<Real>::scalar(s);
  if (detail::wants(tape, {&x})) {
    detail::mark(tape, out);
    tape->record([out, x]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[0];
    });
  }
  return out;
}

// ---- attention ----

template <class Real>
struct AttentionProbs {
  int batch = 0;
  int n_heads = 0;
  int seq = 0;
  std::vector<Real> p;  // (batch, n_heads, seq, seq), query-major
};

/// Scaled dot-product attention over already-projected q/k/v of shape
/// (B, S, D), split into n_heads along D.  Keys whose mask entry is 0
/// get -1e9 added to their logits; with at least one unmasked key in a
/// row this makes their post-softmax probability exactly zero.
template <class Real>
Tensor<Real> multihead_attention(Tape<Real>* tape, Tensor<Real> q, Tensor<Real> k,
                                 Tensor<Real> v,
                                 const std::vector<std::uint8_t>& key_mask,
                                 int n_heads,
                                 AttentionProbs<Real>* probs_out = nullptr) {
  detail::check_same_shape(q.shape(), k.shape(), "multihead_attention");
  detail::check_same_shape(q.shape(), v.shape(), "multihead_attention");
  if (q.rank() != 3)
    throw ValidationError("multihead_attention: expected (B, S, D), got " +
                          shape_str(q.shape()));
  const int B = q.dim(0), S = q.dim(1), D = q.dim(2);
  if (n_heads <= 0 || D % n_heads != 0)
    throw ValidationError("multihead_attention: head count must divide feature width");
  if (key_mask.size() != static_cast<std::size_t>(B) * S)
    throw ValidationError("multihead_attention: key mask must have one entry per (B, S)");
  const int H = n_heads;
  const int hd = D / H;
  const Real att_scale = Real(1) / std::sqrt(Real(hd));
  const Real penalty = Real(-1e9);

  Tensor<Real> out = Tensor<Real>::zeros(q.shape());
  auto probs = std::make_shared<std::vector<Real>>(
      static_cast<std::size_t>(B) * H * S * S);

  const Real* qv = q.values().data();
  const Real* kv = k.values().data();
  const Real* vv = v.values().data();
  Real* ov = out.values().data();
  Real* pv = probs->data();
  const std::uint8_t* mk = key_mask.data();

  kern::parallel_for(B, [&](int b) {
    const long xbase = static_cast<long>(b) * S * D;
    // A batch entry whose keys are all padding attends to nothing: its
    // probability rows and outputs stay exactly zero, and the backward
    // pass (which weights everything by these probabilities) follows.
    bool any_key = false;
    for (int t = 0; t < S; ++t)
      any_key = any_key || mk[static_cast<long>(b) * S + t];
    if (!any_key) return;
    for (int h = 0; h < H; ++h) {
      const int hoff = h * hd;
      Real* pb = pv + (static_cast<long>(b) * H + h) * S * S;
      for (int s = 0; s < S; ++s) {
        Real* prow = pb + static_cast<long>(s) * S;
        const Real* qrow = qv + xbase + static_cast<long>(s) * D + hoff;
        Real row_max = Real(0);
        for (int t = 0; t < S; ++t) {
          const Real* krow = kv + xbase + static_cast<long>(t) * D + hoff;
          Real dot = Real(0);
          for (int c = 0; c < hd; ++c) dot += qrow[c] * krow[c];
          Real logit = dot * att_scale;
          if (!mk[static_cast<long>(b) * S + t]) logit += penalty;
          prow[t] = logit;
          if (t == 0 || logit > row_max) row_max = logit;
        }
        Real sum = Real(0);
        for (int t = 0; t < S; ++t) {
          prow[t] = std::exp(prow[t] - row_max);
          sum += prow[t];
        }
        for (int t = 0; t < S; ++t) prow[t] /= sum;
        Real* orow = ov + xbase + static_cast<long>(s) * D + hoff;
        for (int c = 0; c < hd; ++c) {
          Real acc = Real(0);
          for (int t = 0; t < S; ++t)
            acc += prow[t] * vv[xbase + static_cast<long>(t) * D + hoff + c];
          orow[c] = acc;
        }
      }
    }
  });

  if (probs_out) {
    probs_out->batch = B;
    probs_out->n_heads = H;
    probs_out->seq = S;
    probs_out->p = *probs;
  }

  if (detail::wants(tape, {&q, &k, &v})) {
    detail::mark(tape, out);
    tape->record([out, q, k, v, probs, B, S, D, H, hd, att_scale]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      const Real* gv_out = g->data();
      const Real* qv = q.values().data();
      const Real* kv = k.values().data();
      const Real* vv = v.values().data();
      const Real* pv = probs->data();
      Real* gq = q.needs_grad() ? q.grad().data() : nullptr;
      Real* gk = k.needs_grad() ? k.grad().data() : nullptr;
      Real* gvv = v.needs_grad() ? v.grad().data() : nullptr;
      kern::parallel_for(B, [&](int b) {
        const long xbase = static_cast<long>(b) * S * D;
        std::vector<Real> dp(static_cast<std::size_t>(S) * S);
        std::vector<Real> ds(static_cast<std::size_t>(S) * S);
        for (int h = 0; h < H; ++h) {
          const int hoff = h * hd;
          const Real* pb = pv + (static_cast<long>(b) * H + h) * S * S;
          if (gvv) {
            for (int t = 0; t < S; ++t) {
              Real* grow = gvv + xbase + static_cast<long>(t) * D + hoff;
              for (int c = 0; c < hd; ++c) {
                Real acc = Real(0);
                for (int s = 0; s < S; ++s)
                  acc += pb[static_cast<long>(s) * S + t] *
                         gv_out[xbase + static_cast<long>(s) * D + hoff + c];
                grow[c] += acc;
              }
            }
          }
          for (int s = 0; s < S; ++s) {
            const Real* grow = gv_out + xbase + static_cast<long>(s) * D + hoff;
            for (int t = 0; t < S; ++t) {
              const Real* vrow = vv + xbase + static_cast<long>(t) * D + hoff;
              Real acc = Real(0);
              for (int c = 0; c < hd; ++c) acc += grow[c] * vrow[c];
              dp[static_cast<std::size_t>(s) * S + t] = acc;
            }
          }
          for (int s = 0; s < S; ++s) {
            const Real* prow = pb + static_cast<long>(s) * S;
            Real dot = Real(0);
            for (int t = 0; t < S; ++t)
              dot += dp[static_cast<std::size_t>(s) * S + t] * prow[t];
            for (int t = 0; t < S; ++t)
              ds[static_cast<std::size_t>(s) * S + t] =
                  prow[t] * (dp[static_cast<std::size_t>(s) * S + t] - dot);
          }
          if (gq) {
            for (int s = 0; s < S; ++s) {
              Real* grow = gq + xbase + static_cast<long>(s) * D + hoff;
              for (int c = 0; c < hd; ++c) {
                Real acc = Real(0);
                for (int t = 0; t < S; ++t)
                  acc += ds[static_cast<std::size_t>(s) * S + t] *
                         kv[xbase + static_cast<long>(t) * D + hoff + c];
                grow[c] += att_scale * acc;
              }
            }
          }
          if (gk) {
            for (int t = 0; t < S; ++t) {
              Real* grow = gk + xbase + static_cast<long>(t) * D + hoff;
              for (int c = 0; c < hd; ++c) {
                Real acc = Real(0);
                for (int s = 0; s < S; ++s)
                  acc += ds[static_cast<std::size_t>(s) * S + t] *
                         qv[xbase + static_cast<long>(s) * D + hoff + c];
                grow[c] += att_scale * acc;
              }
            }
          }
        }
      });
    });
  }
  return out;
}

// ---- loss ----

/// Weighted negative log-likelihood over masked-in rows of a (N, C)
/// probability matrix, averaged over the masked-in count.  Probabilities
/// are clamped below at 1e-12 inside the log; rows in the clamped region
/// contribute zero gradient.
template <class Real>
Tensor<Real> masked_cross_entropy(Tape<Real>* tape, Tensor<Real> probs,
                                  const std::vector<std::uint8_t>& labels,
                                  const std::vector<std::uint8_t>& mask,
                                  const std::vector<Real>& class_weights) {
  if (probs.rank() != 2)
    throw ValidationError("masked_cross_entropy: expected (N, C) probabilities");
  const int n = probs.dim(0);
  const int classes = probs.dim(1);
  if (labels.size() != static_cast<std::size_t>(n) ||
      mask.size() != static_cast<std::size_t>(n))
    throw ValidationError("masked_cross_entropy: labels/mask must have one entry per row");
  if (class_weights.size() != static_cast<std::size_t>(classes))
    throw ValidationError("masked_cross_entropy: need one class weight per class");
  for (std::uint8_t y : labels)
    if (y >= classes)
      throw ValidationError("masked_cross_entropy: label outside class range");
  long m = 0;
  for (std::uint8_t u : mask) m += u ? 1 : 0;
  if (m == 0)
    throw ValidationError("masked_cross_entropy: every row is masked out");
  const Real floor = Real(1e-12);
  Real acc = Real(0);
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const Real p = probs.values()[static_cast<std::size_t>(i) * classes + labels[i]];
    acc += -class_weights[labels[i]] * std::log(p < floor ? floor : p);
  }
  Tensor<Real> out = Tensor<Real>::scalar(acc / Real(m));
  if (detail::wants(tape, {&probs})) {
    detail::mark(tape, out);
    auto lab = std::make_shared<std::vector<std::uint8_t>>(labels);
    auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
    auto w = std::make_shared<std::vector<Real>>(class_weights);
    tape->record([out, probs, lab, msk, w, n, classes, m, floor]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      const Real gscale = (*g)[0] / Real(m);
      auto& gp = probs.grad();
      for (int i = 0; i < n; ++i) {
        if (!(*msk)[i]) continue;
        const std::size_t idx =
            static_cast<std::size_t>(i) * classes + (*lab)[i];
        const Real p = probs.values()[idx];
        if (p < floor) continue;
        gp[idx] += gscale * (-(*w)[(*lab)[i]] / p);
      }
    });
  }
  return out;
}

}  // namespace lw::ag
