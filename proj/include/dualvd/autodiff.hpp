#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualvd/tensor.hpp"

namespace dualvd {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace testing {
// Negative-control hook: perturbs the sigmoid backward rule so gradient
// checks can be shown to fail. Never set outside tests and `gradcheck --corrupt-backward`.
inline std::atomic<bool> corrupt_sigmoid_backward{false};
}  // namespace testing

// Reverse-mode gradient tape. One tape per forward pass; nodes are appended in
// evaluation order and replayed backwards, so gradients are deterministic.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool track_gradients = true) : tracking_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return tracking_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), tracking_, nullptr); }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }
  Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
    bool rg = false;
    for (const Var& v : inputs) rg = rg || nodes_[v.id()].requires_grad;
    rg = rg && tracking_;
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }

  std::span<double> grad_accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void backward(Var root) {
    if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    if (root.value().size() != 1)
      throw DimensionError("backward: root must be a scalar, got shape " +
                           shape_str(root.value().shape()));
    if (!nodes_[root.id()].requires_grad) return;
    grad_accumulator(root.id())[0] += 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
    for (Node& n : nodes_)
      if (n.requires_grad && n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool rg, Backward fn) {
    nodes_.push_back(Node{std::move(value), {}, rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  bool tracking_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

inline void expect(bool ok, const char* op, const std::string& what) {
  if (!ok) throw DimensionError(std::string(op) + ": " + what);
}

inline std::string dims(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

inline Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

// Accumulate `g` into the gradient of node `id` if it participates.
inline void accumulate(Tape& t, std::size_t id, std::span<const double> g) {
  if (!t.requires_grad(id)) return;
  auto acc = t.grad_accumulator(id);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

inline double stable_sigmoid(double x) {
  constexpr double kTop = 1.0 - 0x1p-53;
  constexpr double kBottom = std::numeric_limits<double>::denorm_min();
  const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(y, kBottom, kTop);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::expect(a.value().size() == b.value().size() && a.cols() == b.cols(), "add",
                 detail::dims(a) + " vs " + detail::dims(b));
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& tp, std::size_t self) {
    detail::accumulate(tp, ia, tp.grad(self));
    detail::accumulate(tp, ib, tp.grad(self));
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::expect(a.value().size() == b.value().size() && a.cols() == b.cols(), "sub",
                 detail::dims(a) + " vs " + detail::dims(b));
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& tp, std::size_t self) {
    detail::accumulate(tp, ia, tp.grad(self));
    if (tp.requires_grad(ib)) {
      auto g = tp.grad(self);
      auto acc = tp.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::expect(a.value().size() == b.value().size() && a.cols() == b.cols(), "mul",
                 detail::dims(a) + " vs " + detail::dims(b));
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const auto& av = tp.value(ia).values();
    const auto& bv = tp.value(ib).values();
    if (tp.requires_grad(ia)) {
      auto acc = tp.grad_accumulator(ia);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto acc = tp.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [ia = a.id(), s](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += s * g[i];
  });
}

// a (m×n) + row (1×n) broadcast over rows.
inline Var add_row(Var a, Var row) {
  Tape& t = detail::same_tape(a, row);
  const std::size_t m = a.rows(), n = a.cols();
  detail::expect(row.value().size() == n, "add_row", detail::dims(a) + " vs " + detail::dims(row));
  Tensor out = a.value();
  const auto& rv = row.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
  return t.record(std::move(out), {a, row},
                  [ia = a.id(), ir = row.id(), m, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    detail::accumulate(tp, ia, g);
                    if (tp.requires_grad(ir)) {
                      auto acc = tp.grad_accumulator(ir);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) acc[c] += g[r * n + c];
                    }
                  });
}

// a (m×n) ∘ row (1×n) broadcast over rows.
inline Var mul_row(Var a, Var row) {
  Tape& t = detail::same_tape(a, row);
  const std::size_t m = a.rows(), n = a.cols();
  detail::expect(row.value().size() == n, "mul_row", detail::dims(a) + " vs " + detail::dims(row));
  Tensor out = a.value();
  const auto& rv = row.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= rv[c];
  return t.record(std::move(out), {a, row},
                  [ia = a.id(), ir = row.id(), m, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& av = tp.value(ia).values();
                    const auto& rv = tp.value(ir).values();
                    if (tp.requires_grad(ia)) {
                      auto acc = tp.grad_accumulator(ia);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += g[r * n + c] * rv[c];
                    }
                    if (tp.requires_grad(ir)) {
                      auto acc = tp.grad_accumulator(ir);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) acc[c] += g[r * n + c] * av[r * n + c];
                    }
                  });
}

// a (m×n) ∘ col (m×1) broadcast over columns.
inline Var mul_col(Var a, Var col) {
  Tape& t = detail::same_tape(a, col);
  const std::size_t m = a.rows(), n = a.cols();
  detail::expect(col.value().size() == m, "mul_col", detail::dims(a) + " vs " + detail::dims(col));
  Tensor out = a.value();
  const auto& cv = col.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= cv[r];
  return t.record(std::move(out), {a, col},
                  [ia = a.id(), ic = col.id(), m, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& av = tp.value(ia).values();
                    const auto& cv = tp.value(ic).values();
                    if (tp.requires_grad(ia)) {
                      auto acc = tp.grad_accumulator(ia);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += g[r * n + c] * cv[r];
                    }
                    if (tp.requires_grad(ic)) {
                      auto acc = tp.grad_accumulator(ic);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) acc[r] += g[r * n + c] * av[r * n + c];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Matrix products

// a (m×k) · b (k×n)
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::expect(b.rows() == k, "matmul", detail::dims(a) + " · " + detail::dims(b));
  Tensor out = Tensor::zeros(m, n);
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < k; ++i) {
      const double x = av[r * k + i];
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += x * bv[i * n + c];
    }
  return t.record(std::move(out), {a, b},
                  [ia = a.id(), ib = b.id(), m, k, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& av = tp.value(ia).values();
                    const auto& bv = tp.value(ib).values();
                    if (tp.requires_grad(ia)) {
                      auto acc = tp.grad_accumulator(ia);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t i = 0; i < k; ++i) {
                          double s = 0.0;
                          for (std::size_t c = 0; c < n; ++c) s += g[r * n + c] * bv[i * n + c];
                          acc[r * k + i] += s;
                        }
                    }
                    if (tp.requires_grad(ib)) {
                      auto acc = tp.grad_accumulator(ib);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t i = 0; i < k; ++i) {
                          const double x = av[r * k + i];
                          for (std::size_t c = 0; c < n; ++c) acc[i * n + c] += x * g[r * n + c];
                        }
                    }
                  });
}

// a (m×k) · bᵀ where b is (n×k)
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  detail::expect(b.cols() == k, "matmul_nt", detail::dims(a) + " · " + detail::dims(b) + "ᵀ");
  Tensor out = Tensor::zeros(m, n);
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t o = 0; o < n; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += av[r * k + i] * bv[o * k + i];
      out[r * n + o] = s;
    }
  return t.record(std::move(out), {a, b},
                  [ia = a.id(), ib = b.id(), m, k, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& av = tp.value(ia).values();
                    const auto& bv = tp.value(ib).values();
                    if (tp.requires_grad(ia)) {
                      auto acc = tp.grad_accumulator(ia);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t o = 0; o < n; ++o) {
                          const double go = g[r * n + o];
                          if (go == 0.0) continue;
                          for (std::size_t i = 0; i < k; ++i) acc[r * k + i] += go * bv[o * k + i];
                        }
                    }
                    if (tp.requires_grad(ib)) {
                      auto acc = tp.grad_accumulator(ib);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t o = 0; o < n; ++o) {
                          const double go = g[r * n + o];
                          if (go == 0.0) continue;
                          for (std::size_t i = 0; i < k; ++i) acc[o * k + i] += go * av[r * k + i];
                        }
                    }
                  });
}

// aᵀ · b where a is (k×m) and b is (k×n)
inline Var matmul_tn(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  detail::expect(b.rows() == k, "matmul_tn", detail::dims(a) + "ᵀ · " + detail::dims(b));
  Tensor out = Tensor::zeros(m, n);
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t r = 0; r < m; ++r) {
      const double x = av[i * m + r];
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += x * bv[i * n + c];
    }
  return t.record(std::move(out), {a, b},
                  [ia = a.id(), ib = b.id(), m, k, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& av = tp.value(ia).values();
                    const auto& bv = tp.value(ib).values();
                    if (tp.requires_grad(ia)) {
                      auto acc = tp.grad_accumulator(ia);
                      for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t r = 0; r < m; ++r) {
                          double s = 0.0;
                          for (std::size_t c = 0; c < n; ++c) s += g[r * n + c] * bv[i * n + c];
                          acc[i * m + r] += s;
                        }
                    }
                    if (tp.requires_grad(ib)) {
                      auto acc = tp.grad_accumulator(ib);
                      for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t r = 0; r < m; ++r) {
                          const double x = av[i * m + r];
                          for (std::size_t c = 0; c < n; ++c) acc[i * n + c] += x * g[r * n + c];
                        }
                    }
                  });
}

// Affine map over rows: x (m×in) · Wᵀ (W is out×in) + b (out). `bias` may be invalid.
inline Var linear(Var x, Var weight, Var bias = {}) {
  Var y = matmul_nt(x, weight);
  return bias.valid() ? add_row(y, bias) : y;
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var sigmoid(Var a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = detail::stable_sigmoid(v);
  return t.record(std::move(out), {a}, [ia = a.id()](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const auto& y = tp.value(self).values();
    const double fudge = testing::corrupt_sigmoid_backward.load() ? 1.01 : 1.0;
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += fudge * g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh(Var a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return t.record(std::move(out), {a}, [ia = a.id()](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const auto& y = tp.value(self).values();
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

// Numerically stable softmax of one contiguous block (max-subtracted).
inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double& x : v) z += (x = std::exp(x - mx));
  for (double& x : v) x /= z;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

// Softmax applied independently to each row.
inline Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.value();
  for (std::size_t r = 0; r < m; ++r) softmax_inplace(out.data().subspan(r * n, n));
  return t.record(std::move(out), {a}, [ia = a.id(), m, n](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const auto& y = tp.value(self).values();
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

// −log softmax(logits)[target], logits taken as one flat vector.
inline Var cross_entropy(Var logits, std::size_t target) {
  Tape& t = logits.tape();
  const auto& z = logits.value().values();
  if (target >= z.size())
    throw DomainError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                      std::to_string(z.size()) + " classes");
  std::vector<double> p(z.begin(), z.end());
  softmax_inplace(p);
  const double mx = *std::max_element(z.begin(), z.end());
  double lse = 0.0;
  for (double v : z) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  Tensor out({1, 1}, lse - z[target]);
  return t.record(std::move(out), {logits},
                  [il = logits.id(), target, p = std::move(p)](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    auto acc = tp.grad_accumulator(il);
                    for (std::size_t i = 0; i < p.size(); ++i)
                      acc[i] += g * (p[i] - (i == target ? 1.0 : 0.0));
                  });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = parts[0].tape();
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    detail::expect(p.rows() == m, "concat_cols", "row mismatch " + detail::dims(p));
    n += p.cols();
  }
  Tensor out = Tensor::zeros(m, n);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, width)
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    const auto& pv = p.value().values();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.begin() + r * w, w, out.values().begin() + r * n + off);
    spans.emplace_back(p.id(), w);
    off += w;
  }
  return t.record(std::move(out), parts, [spans, m, n](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    std::size_t off = 0;
    for (auto [id, w] : spans) {
      if (tp.requires_grad(id)) {
        auto acc = tp.grad_accumulator(id);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) acc[r * w + c] += g[r * n + off + c];
      }
      off += w;
    }
  });
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = parts[0].tape();
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    detail::expect(p.cols() == n, "concat_rows", "column mismatch " + detail::dims(p));
    m += p.rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, element count)
  for (const Var& p : parts) {
    const auto& pv = p.value().values();
    data.insert(data.end(), pv.begin(), pv.end());
    spans.emplace_back(p.id(), pv.size());
  }
  return t.record(Tensor::matrix(m, n, std::move(data)), parts, [spans](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    std::size_t off = 0;
    for (auto [id, count] : spans) {
      detail::accumulate(tp, id, g.subspan(off, count));
      off += count;
    }
  });
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  detail::expect(begin < end && end <= n, "slice_cols", "bad range for " + detail::dims(a));
  const std::size_t w = end - begin;
  Tensor out = Tensor::zeros(m, w);
  const auto& av = a.value().values();
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(av.begin() + r * n + begin, w, out.values().begin() + r * w);
  return a.tape().record(std::move(out), {a},
                         [ia = a.id(), m, n, w, begin](Tape& tp, std::size_t self) {
                           auto g = tp.grad(self);
                           auto acc = tp.grad_accumulator(ia);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               acc[r * n + begin + c] += g[r * w + c];
                         });
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  detail::expect(begin < end && end <= m, "slice_rows", "bad range for " + detail::dims(a));
  const auto& av = a.value().values();
  std::vector<double> data(av.begin() + begin * n, av.begin() + end * n);
  return a.tape().record(Tensor::matrix(end - begin, n, std::move(data)), {a},
                         [ia = a.id(), off = begin * n](Tape& tp, std::size_t self) {
                           auto g = tp.grad(self);
                           auto acc = tp.grad_accumulator(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) acc[off + i] += g[i];
                         });
}

// Row r of the result is row indices[r] of `a`. The row `frozen_row`
// (when given) reads as zeros and takes no gradient; used for the embedding pad row.
inline Var gather_rows(Var a, std::vector<std::size_t> indices,
                       std::optional<std::size_t> frozen_row = std::nullopt) {
  const std::size_t m = a.rows(), n = a.cols();
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  std::vector<double> data;
  data.reserve(indices.size() * n);
  const auto& av = a.value().values();
  for (std::size_t idx : indices) {
    if (idx >= m)
      throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                           detail::dims(a));
    if (frozen_row && idx == *frozen_row) data.insert(data.end(), n, 0.0);
    else data.insert(data.end(), av.begin() + idx * n, av.begin() + (idx + 1) * n);
  }
  const std::size_t count = indices.size();
  return a.tape().record(
      Tensor::matrix(count, n, std::move(data)), {a},
      [ia = a.id(), n, indices = std::move(indices), frozen_row](Tape& tp, std::size_t self) {
        auto g = tp.grad(self);
        auto acc = tp.grad_accumulator(ia);
        for (std::size_t r = 0; r < indices.size(); ++r) {
          if (frozen_row && indices[r] == *frozen_row) continue;
          for (std::size_t c = 0; c < n; ++c) acc[indices[r] * n + c] += g[r * n + c];
        }
      });
}

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  detail::expect(rows * cols == a.value().size(), "reshape",
                 detail::dims(a) + " -> " + std::to_string(rows) + "x" + std::to_string(cols));
  return a.tape().record(a.value().reshaped({rows, cols}), {a},
                         [ia = a.id()](Tape& tp, std::size_t self) {
                           detail::accumulate(tp, ia, tp.grad(self));
                         });
}

inline Var transpose(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(n, m);
  const auto& av = a.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = av[r * n + c];
  return a.tape().record(std::move(out), {a}, [ia = a.id(), m, n](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += g[c * m + r];
  });
}

// Column-wise sum over rows: (m×n) -> (1×n).
inline Var sum_rows(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(1, n);
  const auto& av = a.value().values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += av[r * n + c];
  return a.tape().record(std::move(out), {a}, [ia = a.id(), m, n](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto acc = tp.grad_accumulator(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += g[c];
  });
}

inline Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Tensor({1, 1}, s), {a}, [ia = a.id()](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    auto acc = tp.grad_accumulator(ia);
    for (double& v : acc) v += g;
  });
}

// Σ w∘a against a fixed weight tensor of the same size.
inline Var weighted_sum(Var a, const Tensor& weights) {
  detail::expect(weights.size() == a.value().size(), "weighted_sum", "size mismatch");
  return sum_all(mul(a, a.tape().constant(weights.reshaped(a.value().shape()))));
}

}  // namespace dualvd
