#ifndef GOGNN_TENSOR_HPP
#define GOGNN_TENSOR_HPP

// Dense row-major tensors, a reverse-mode tape, and the Adam optimizer.
//
// Only rank-1 and rank-2 tensors are supported; a rank-1 tensor of length n
// behaves as a 1 x n matrix in every op.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gognn/error.hpp"

namespace gognn {

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, data_(rows * cols, fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 2) {
      throw ShapeError("tensor rank must be 1 or 2, got " + std::to_string(shape_.size()));
    }
    const std::size_t n =
        std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != data_.size()) {
      throw ShapeError("shape " + shape_string() + " does not match " +
                       std::to_string(data_.size()) + " data values");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw NonFiniteError("tensor data contains a non-finite value");
    }
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor zeros_like(const Tensor& t) {
    return Tensor(t.shape_, std::vector<double>(t.size(), 0.0));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Named parameters in a stable (lexicographic) order.
using ParameterMap = std::map<std::string, Parameter>;

inline void zero_grads(ParameterMap& params) {
  for (auto& [_, p] : params) p.zero_grad();
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

// out (n x m) += a (n x k) * b (k x m)
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t n,
                     std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bp[j];
    }
  }
}

inline Tensor transpose(const Tensor& t) {
  Tensor out(t.cols(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
  return out;
}

}  // namespace detail

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Reverse-mode gradient recorder.
///
/// Every op appends a node holding its forward value and a closure that
/// pushes the node's gradient to its inputs.  Parameters enter as leaves
/// bound to an external gradient tensor which `backward` accumulates into.
/// A Tape built with `record = false` keeps values only.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// A differentiable input whose gradient is read back with grad().
  Var leaf(Tensor value) { return push(std::move(value), record_, {}); }

  Var parameter(Parameter& p) { return parameter(p.value, p.grad); }

  Var parameter(const Tensor& value, Tensor& grad_sink) {
    Var v = push(value, record_, {});
    if (record_) {
      if (!grad_sink.same_shape(value)) {
        throw ShapeError("parameter gradient " + grad_sink.shape_string() +
                         " does not match value " + value.shape_string());
      }
      nodes_[v.id].sink = &grad_sink;
    }
    return v;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward root with respect to v (zeros if unreached).
  const Tensor& grad(Var v) {
    Node& n = nodes_.at(v.id);
    ensure_grad(n);
    return n.grad;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  void backward(Var loss) {
    const Tensor& l = value(loss);
    if (l.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + l.shape_string());
    Tensor seed(l.shape(), std::vector<double>{1.0});
    backward(loss, seed);
  }

  /// Propagates `seed` as the gradient of `root` through everything recorded
  /// before it, then adds leaf gradients into their parameter sinks.
  void backward(Var root, const Tensor& seed) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    detail::require_same_shape(value(root), seed, "backward seed");
    for (auto& n : nodes_) n.grad = Tensor();
    Node& r = nodes_[root.id];
    ensure_grad(r);
    for (std::size_t i = 0; i < seed.size(); ++i) r.grad[i] += seed[i];
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.sink) {
        auto dst = n.sink->data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  /// Gradient buffer of node `id`, zero-allocated on first use.  Op closures
  /// accumulate into it.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    ensure_grad(n);
    return n.grad;
  }

  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }

  /// Appends a node.  `backward` may be empty when no input needs a gradient.
  Var push(Tensor value, bool requires_grad, std::function<void()> backward) {
    if (!value.all_finite()) throw NonFiniteError("op produced a non-finite value");
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  /// Records which side of a non-differentiable point a piecewise op took.
  /// Finite-difference checks compare these patterns to detect kink crossings.
  void note_branch(std::uint8_t b) { branches_.push_back(b); }
  const std::vector<std::uint8_t>& branch_pattern() const { return branches_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Tensor* sink = nullptr;
  };

  static void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
      n.grad = Tensor::zeros_like(n.value);
    }
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> branches_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

/// Compressed neighbor lists: neighbors of node i are
/// indices[offsets[i] .. offsets[i+1]).
struct Adjacency {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t nodes() const { return offsets.size() - 1; }
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {indices.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

namespace ops {

namespace detail_ops {
inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("vars recorded on different tapes");
  return *a.tape;
}
inline bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}
}  // namespace detail_ops

/// a (n x k) * b (k x m)
inline Var matmul(Var a, Var b) {
  Tape& t = detail_ops::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(n, m);
  detail::gemm_acc(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  const bool rg = detail_ops::any_grad(t, {a, b});
  const std::size_t out_id = t.size();
  return t.push(std::move(out), rg, [&t, a, b, out_id, n, k, m] {
    const Tensor& g = t.grad_of(out_id);
    if (t.requires_grad(a)) {
      Tensor bt = detail::transpose(b.value());
      detail::gemm_acc(g.data().data(), bt.data().data(), t.grad_buffer(a.id).data().data(), n,
                       m, k);
    }
    if (t.requires_grad(b)) {
      Tensor at = detail::transpose(a.value());
      detail::gemm_acc(at.data().data(), g.data().data(), t.grad_buffer(b.id).data().data(), k,
                       n, m);
    }
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail_ops::tape_of(a, b);
  gognn::detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail_ops::any_grad(t, {a, b}), [&t, a, b, out_id] {
    const auto g = t.grad_of(out_id).data();
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto dst = t.grad_buffer(v.id).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

/// max(x, 0); the subgradient at 0 is 0.
inline Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  for (double& v : out.data()) {
    t.note_branch(v > 0.0);
    if (!(v > 0.0)) v = 0.0;
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id] {
    const auto g = t.grad_of(out_id).data();
    const auto x = a.value().data();
    auto dst = t.grad_buffer(a.id).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) dst[i] += g[i];
  });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  for (double& v : out.data()) {
    t.note_branch(v > 0.0);
    if (!(v > 0.0)) v *= slope;
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, slope] {
    const auto g = t.grad_of(out_id).data();
    const auto x = a.value().data();
    auto dst = t.grad_buffer(a.id).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > 0.0 ? g[i] : slope * g[i];
  });
}

/// out[i] = sum of a[j] over j in adj.neighbors(i).
inline Var neighbor_sum(Var a, const Adjacency& adj) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  if (adj.nodes() != av.rows()) {
    throw ShapeError("neighbor_sum: adjacency over " + std::to_string(adj.nodes()) +
                     " nodes vs features " + av.shape_string());
  }
  const std::size_t d = av.cols();
  Tensor out(av.rows(), d);
  for (std::size_t i = 0; i < adj.nodes(); ++i) {
    auto o = out.row(i);
    for (std::size_t j : adj.neighbors(i)) {
      auto src = av.row(j);
      for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
    }
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, adj, d] {
    const Tensor& g = t.grad_of(out_id);
    Tensor& dst = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < adj.nodes(); ++i) {
      auto gi = g.row(i);
      for (std::size_t j : adj.neighbors(i)) {
        auto dj = dst.row(j);
        for (std::size_t c = 0; c < d; ++c) dj[c] += gi[c];
      }
    }
  });
}

/// Rows of `a` selected by `index` (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  const std::size_t d = av.cols();
  Tensor out(index.size(), d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(index[r]) + " out of range for " +
                       av.shape_string());
    }
    std::copy_n(av.row(index[r]).begin(), d, out.row(r).begin());
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, idx = std::move(index), d] {
    const Tensor& g = t.grad_of(out_id);
    Tensor& dst = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto gr = g.row(r);
      auto dr = dst.row(idx[r]);
      for (std::size_t c = 0; c < d; ++c) dr[c] += gr[c];
    }
  });
}

/// Column-wise concatenation [a | b].
inline Var concat(Var a, Var b) {
  Tape& t = detail_ops::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r).begin(), ca, out.row(r).begin());
    std::copy_n(bv.row(r).begin(), cb, out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail_ops::any_grad(t, {a, b}), [&t, a, b, out_id, ca, cb] {
    const Tensor& g = t.grad_of(out_id);
    if (t.requires_grad(a)) {
      Tensor& d = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < ca; ++c) d(r, c) += g(r, c);
    }
    if (t.requires_grad(b)) {
      Tensor& d = t.grad_buffer(b.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < cb; ++c) d(r, c) += g(r, ca + c);
    }
  });
}

/// Segment boundaries: segment s spans rows [offsets[s], offsets[s+1]).
using Segments = std::vector<std::size_t>;

namespace detail_ops {
inline void check_segments(const Segments& seg, std::size_t rows, const char* op) {
  if (seg.empty() || seg.front() != 0 || seg.back() != rows ||
      !std::is_sorted(seg.begin(), seg.end())) {
    throw ShapeError(std::string(op) + ": segments do not cover " + std::to_string(rows) +
                     " rows");
  }
}
}  // namespace detail_ops

/// Per-segment column sums; one output row per segment.
inline Var sum_rows(Var a, Segments seg) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  detail_ops::check_segments(seg, av.rows(), "sum_rows");
  const std::size_t d = av.cols();
  Tensor out(seg.size() - 1, d);
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    auto o = out.row(s);
    for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) {
      auto x = av.row(r);
      for (std::size_t c = 0; c < d; ++c) o[c] += x[c];
    }
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, seg = std::move(seg), d] {
    const Tensor& g = t.grad_of(out_id);
    Tensor& dst = t.grad_buffer(a.id);
    for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
      auto gs = g.row(s);
      for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) {
        auto dr = dst.row(r);
        for (std::size_t c = 0; c < d; ++c) dr[c] += gs[c];
      }
    }
  });
}

inline Var mean_rows(Var a, Segments seg) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  detail_ops::check_segments(seg, av.rows(), "mean_rows");
  const std::size_t d = av.cols();
  Tensor out(seg.size() - 1, d);
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    const std::size_t n = seg[s + 1] - seg[s];
    if (n == 0) throw ShapeError("mean_rows: empty segment " + std::to_string(s));
    auto o = out.row(s);
    for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) {
      auto x = av.row(r);
      for (std::size_t c = 0; c < d; ++c) o[c] += x[c];
    }
    for (double& v : o) v /= static_cast<double>(n);
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, seg = std::move(seg), d] {
    const Tensor& g = t.grad_of(out_id);
    Tensor& dst = t.grad_buffer(a.id);
    for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(seg[s + 1] - seg[s]);
      auto gs = g.row(s);
      for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) {
        auto dr = dst.row(r);
        for (std::size_t c = 0; c < d; ++c) dr[c] += gs[c] * inv;
      }
    }
  });
}

/// Per-segment column maxima.  Ties route the gradient to the first maximal row.
inline Var max_rows(Var a, Segments seg) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  detail_ops::check_segments(seg, av.rows(), "max_rows");
  const std::size_t d = av.cols();
  const std::size_t nseg = seg.size() - 1;
  Tensor out(nseg, d);
  std::vector<std::size_t> argmax(nseg * d);
  for (std::size_t s = 0; s < nseg; ++s) {
    if (seg[s + 1] == seg[s]) throw ShapeError("max_rows: empty segment " + std::to_string(s));
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t best = seg[s];
      for (std::size_t r = seg[s] + 1; r < seg[s + 1]; ++r)
        if (av(r, c) > av(best, c)) best = r;
      out(s, c) = av(best, c);
      argmax[s * d + c] = best;
      t.note_branch(static_cast<std::uint8_t>(best - seg[s]));
    }
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a),
                [&t, a, out_id, argmax = std::move(argmax), nseg, d] {
                  const Tensor& g = t.grad_of(out_id);
                  Tensor& dst = t.grad_buffer(a.id);
                  for (std::size_t s = 0; s < nseg; ++s)
                    for (std::size_t c = 0; c < d; ++c) dst(argmax[s * d + c], c) += g(s, c);
                });
}

inline Var sum_rows(Var a) { return sum_rows(a, {0, a.value().rows()}); }
inline Var mean_rows(Var a) { return mean_rows(a, {0, a.value().rows()}); }
inline Var max_rows(Var a) { return max_rows(a, {0, a.value().rows()}); }

/// Softmax of a column vector (E x 1) independently within each segment.
inline Var softmax_over_group(Var a, Segments seg) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  if (av.cols() != 1) throw ShapeError("softmax_over_group: expected a column, got " + av.shape_string());
  detail_ops::check_segments(seg, av.rows(), "softmax_over_group");
  Tensor out(av.rows(), 1);
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    if (seg[s + 1] == seg[s]) continue;
    double mx = av[seg[s]];
    for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) mx = std::max(mx, av[r]);
    double z = 0.0;
    for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) z += (out[r] = std::exp(av[r] - mx));
    for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) out[r] /= z;
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [&t, a, out_id, seg = std::move(seg)] {
    const Tensor& g = t.grad_of(out_id);
    const Tensor& y = t.value(Var{&t, out_id});
    Tensor& dst = t.grad_buffer(a.id);
    for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
      double dot = 0.0;
      for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) dot += g[r] * y[r];
      for (std::size_t r = seg[s]; r < seg[s + 1]; ++r) dst[r] += y[r] * (g[r] - dot);
    }
  });
}

/// Multiplies row r of `a` by w[r] (w is a column vector).
inline Var scale_rows(Var a, Var w) {
  Tape& t = detail_ops::tape_of(a, w);
  const Tensor& av = a.value();
  const Tensor& wv = w.value();
  if (wv.cols() != 1 || wv.rows() != av.rows()) {
    throw ShapeError("scale_rows: shape mismatch " + av.shape_string() + " vs " + wv.shape_string());
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= wv[r];
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail_ops::any_grad(t, {a, w}), [&t, a, w, out_id] {
    const Tensor& g = t.grad_of(out_id);
    const Tensor& av = a.value();
    const Tensor& wv = w.value();
    if (t.requires_grad(a)) {
      Tensor& d = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += g(r, c) * wv[r];
    }
    if (t.requires_grad(w)) {
      Tensor& d = t.grad_buffer(w.id);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) s += g(r, c) * av(r, c);
        d[r] += s;
      }
    }
  });
}

/// Sum of all entries as a 1 x 1 tensor.
inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t out_id = t.size();
  return t.push(Tensor(1, 1, s), t.requires_grad(a), [&t, a, out_id] {
    const double g = t.grad_of(out_id)[0];
    for (double& d : t.grad_buffer(a.id).data()) d += g;
  });
}

/// Row-wise cosine similarity of two equally shaped matrices -> column vector.
/// A row pair containing a zero vector has similarity 0 and passes no gradient.
inline Var cosine(Var a, Var b) {
  Tape& t = detail_ops::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  gognn::detail::require_same_shape(av, bv, "cosine");
  const std::size_t n = av.rows(), d = av.cols();
  Tensor out(n, 1);
  std::vector<double> na(n), nb(n);
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += av(r, c) * bv(r, c);
      aa += av(r, c) * av(r, c);
      bb += bv(r, c) * bv(r, c);
    }
    na[r] = std::sqrt(aa);
    nb[r] = std::sqrt(bb);
    const bool zero = na[r] == 0.0 || nb[r] == 0.0;
    t.note_branch(zero);
    out[r] = zero ? 0.0 : std::clamp(dot / (na[r] * nb[r]), -1.0, 1.0);
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail_ops::any_grad(t, {a, b}),
                [&t, a, b, out_id, na = std::move(na), nb = std::move(nb), n, d] {
                  const Tensor& g = t.grad_of(out_id);
                  const Tensor& y = t.value(Var{&t, out_id});
                  const Tensor& av = a.value();
                  const Tensor& bv = b.value();
                  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
                  for (std::size_t r = 0; r < n; ++r) {
                    if (na[r] == 0.0 || nb[r] == 0.0 || g[r] == 0.0) continue;
                    const double inv = 1.0 / (na[r] * nb[r]);
                    if (ga) {
                      Tensor& da = t.grad_buffer(a.id);
                      for (std::size_t c = 0; c < d; ++c)
                        da(r, c) += g[r] * (bv(r, c) * inv - y[r] * av(r, c) / (na[r] * na[r]));
                    }
                    if (gb) {
                      Tensor& db = t.grad_buffer(b.id);
                      for (std::size_t c = 0; c < d; ++c)
                        db(r, c) += g[r] * (av(r, c) * inv - y[r] * bv(r, c) / (nb[r] * nb[r]));
                    }
                  }
                });
}

}  // namespace ops

/// Cosine similarity of two plain vectors; 0 when either is the zero vector.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine: shape mismatch [" + std::to_string(u.size()) + "] vs [" +
                     std::to_string(v.size()) + "]");
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction.  Moments are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParameterMap& params) {
    ++steps_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (auto& [name, p] : params) {
      auto [it, inserted] = moments_.try_emplace(name);
      auto& [m, v] = it->second;
      if (inserted) {
        m.assign(p.value.size(), 0.0);
        v.assign(p.value.size(), 0.0);
      }
      auto w = p.value.data();
      auto g = p.grad.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  std::size_t steps_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace gognn

#endif  // GOGNN_TENSOR_HPP
