#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "gmrl/ad/tensor.hpp"

namespace gmrl::ad {

// Reverse-mode automatic differentiation over 2-D tensors.
//
// Every op allocates a result node holding its value, the parents it was
// computed from and a closure that pushes the result's gradient into the
// parents. The graph is acyclic by construction: a node can only reference
// nodes that existed before it.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  const char* op = "leaf";

  Tensor<T>& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.rows(), value.cols());
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->ensure_grad(); }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->ensure_grad().fill(T(0)); }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const {
    if (node_->value.size() != 1) {
      throw std::invalid_argument("item() on non-scalar " +
                                  node_->value.shape_string());
    }
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, const char* op,
                   std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any && grad_mode()) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(n));
}

inline void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, const char* op, F f, D dfdx_from_xy) {
  const auto& av = a.value();
  Tensor<T> out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto pa = a.ptr();
  return make_result<T>(std::move(out), op, {pa}, [pa, dfdx_from_xy](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    const auto& x = pa->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      g[i] += self.grad[i] * dfdx_from_xy(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

// Runs the backward pass from a scalar root, accumulating into every
// reachable node that requires a gradient.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1 || root.rows() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " +
                                root.value().shape_string());
  }
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (n->backward_fn) n->ensure_grad().fill(T(0));
  }
  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul",
                  av.shape_string() + " x " + bv.shape_string());
  const std::size_t r = av.rows(), k = av.cols(), n = bv.cols();
  Tensor<T> out(r, n);
  gemm_acc(av.data(), bv.data(), out.data(), r, k, n);
  auto pa = a.ptr(), pb = b.ptr();
  return detail::make_result<T>(std::move(out), "matmul", {pa, pb},
                                [pa, pb, r, k, n](Node<T>& self) {
    if (pa->requires_grad) {
      gemm_nt_acc(self.grad.data(), pb->value.data(), pa->ensure_grad().data(),
                  r, k, n);
    }
    if (pb->requires_grad) {
      gemm_tn_acc(pa->value.data(), self.grad.data(), pb->ensure_grad().data(),
                  r, k, n);
    }
  });
}

// x(r x k) * w(k x n) + bias(1 x n)
template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = bias.value();
  detail::require(xv.cols() == wv.rows(), "affine",
                  xv.shape_string() + " x " + wv.shape_string());
  detail::require(bv.rows() == 1 && bv.cols() == wv.cols(), "affine",
                  "bias " + bv.shape_string());
  const std::size_t r = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor<T> out(r, n);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(bv.data(), bv.data() + n, out.data() + i * n);
  }
  gemm_acc(xv.data(), wv.data(), out.data(), r, k, n);
  auto px = x.ptr(), pw = w.ptr(), pb = bias.ptr();
  return detail::make_result<T>(std::move(out), "affine", {px, pw, pb},
                                [px, pw, pb, r, k, n](Node<T>& self) {
    if (px->requires_grad) {
      gemm_nt_acc(self.grad.data(), pw->value.data(), px->ensure_grad().data(),
                  r, k, n);
    }
    if (pw->requires_grad) {
      gemm_tn_acc(px->value.data(), self.grad.data(), pw->ensure_grad().data(),
                  r, k, n);
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad(i, j);
      }
    }
  });
}

// Elementwise a + b; b may also be a (1 x cols) row broadcast over rows.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  detail::require(!broadcast || (bv.rows() == 1 && bv.cols() == av.cols()),
                  "add", av.shape_string() + " + " + bv.shape_string());
  Tensor<T> out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += broadcast ? bv[i % cols] : bv[i];
  }
  auto pa = a.ptr(), pb = b.ptr();
  return detail::make_result<T>(std::move(out), "add", {pa, pb},
                                [pa, pb, broadcast, cols](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[broadcast ? i % cols : i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().same_shape(b.value()), "sub",
                  a.value().shape_string() + " - " + b.value().shape_string());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return detail::make_result<T>(std::move(out), "sub", {pa, pb},
                                [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

// Elementwise product; b may also be a (rows x 1) column broadcast.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  detail::require(!broadcast || (bv.cols() == 1 && bv.rows() == av.rows()),
                  "mul", av.shape_string() + " * " + bv.shape_string());
  const std::size_t cols = av.cols();
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= broadcast ? bv[i / cols] : bv[i];
  }
  auto pa = a.ptr(), pb = b.ptr();
  return detail::make_result<T>(std::move(out), "mul", {pa, pb},
                                [pa, pb, broadcast, cols](Node<T>& self) {
    const auto& av = pa->value;
    const auto& bv = pb->value;
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * (broadcast ? bv[i / cols] : bv[i]);
      }
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[broadcast ? i / cols : i] += self.grad[i] * av[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>(
      a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary<T>(
      a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary<T>(
      a, "tanh", [](T x) { return std::tanh(x); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>(
      a, "log", [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>(
      a, "square", [](T x) { return x * x; },
      [](T x, T) { return T(2) * x; });
}

// Clamps into [lo, hi]; the gradient is zero outside the open interval.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary<T>(
      a, "clamp", [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// Elementwise minimum; ties send the gradient to `a`.
template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().same_shape(b.value()), "minimum",
                  a.value().shape_string() + " vs " + b.value().shape_string());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(out[i], b.value()[i]);
  }
  auto pa = a.ptr(), pb = b.ptr();
  return detail::make_result<T>(std::move(out), "minimum", {pa, pb},
                                [pa, pb](Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = pa->value[i] <= pb->value[i];
      if (take_a && pa->requires_grad) pa->ensure_grad()[i] += self.grad[i];
      if (!take_a && pb->requires_grad) pb->ensure_grad()[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, av(i, j));
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += (out(i, j) = std::exp(av(i, j) - m));
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "softmax", {pa},
                                [pa, r, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
      }
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, av(i, j));
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(av(i, j) - m);
    const T lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = av(i, j) - lz;
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "log_softmax", {pa},
                                [pa, r, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      T gsum = T(0);
      for (std::size_t j = 0; j < c; ++j) gsum += self.grad(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g(i, j) += self.grad(i, j) - std::exp(self.value(i, j)) * gsum;
      }
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "concat_cols",
                    "row mismatch " + p.value().shape_string());
    c += p.cols();
  }
  Tensor<T> out(r, c);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i) {
      std::copy(p.value().row(i).begin(), p.value().row(i).end(),
                out.data() + i * c + off);
    }
    parents.push_back(p.ptr());
    offsets.push_back(off);
    off += p.cols();
  }
  auto captured = parents;
  return detail::make_result<T>(std::move(out), "concat", std::move(parents),
                                [captured, offsets, r, c](Node<T>& self) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      auto& p = captured[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      const std::size_t pc = p->value.cols();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < pc; ++j) {
          g(i, j) += self.grad[i * c + offsets[k] + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len) {
  const auto& av = a.value();
  detail::require(start + len <= av.cols(), "slice_cols",
                  "range exceeds " + av.shape_string());
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out(r, len);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < len; ++j) out(i, j) = av(i, start + j);
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "slice_cols", {pa},
                                [pa, r, c, start, len](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        g[i * c + start + j] += self.grad(i, j);
      }
    }
  });
}

// Picks a(i, index[i]) for every row -> (rows x 1).
template <typename T>
Var<T> gather_cols(const Var<T>& a, const std::vector<int>& index) {
  const auto& av = a.value();
  detail::require(index.size() == av.rows(), "gather_cols", "index size");
  Tensor<T> out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    detail::require(index[i] >= 0 && std::size_t(index[i]) < av.cols(),
                    "gather_cols", "column out of range");
    out[i] = av(i, index[i]);
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "gather_cols", {pa},
                                [pa, index](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) g(i, index[i]) += self.grad[i];
  });
}

// Selects rows by index (duplicates allowed) -> (index.size() x cols).
template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<int>& index) {
  const auto& av = a.value();
  const std::size_t c = av.cols();
  Tensor<T> out(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] >= 0 && std::size_t(index[i]) < av.rows(),
                    "gather_rows", "row out of range");
    std::copy(av.row(index[i]).begin(), av.row(index[i]).end(),
              out.data() + i * c);
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "gather_rows", {pa},
                                [pa, index, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g(index[i], j) += self.grad(i, j);
    }
  });
}

// Mean over row segments [offsets[s], offsets[s+1]) -> (segments x cols).
// Each column is summed in sorted order so the result does not depend on
// the order of rows within a segment, bit for bit.
template <typename T>
Var<T> segment_mean(const Var<T>& a, const std::vector<int>& offsets) {
  const auto& av = a.value();
  detail::require(offsets.size() >= 2 && offsets.front() == 0 &&
                      std::size_t(offsets.back()) == av.rows(),
                  "segment_mean", "offsets must span all rows");
  const std::size_t segs = offsets.size() - 1, c = av.cols();
  Tensor<T> out(segs, c);
  std::vector<T> column;
  for (std::size_t s = 0; s < segs; ++s) {
    const int lo = offsets[s], hi = offsets[s + 1];
    detail::require(hi > lo, "segment_mean", "empty segment");
    for (std::size_t j = 0; j < c; ++j) {
      column.clear();
      for (int i = lo; i < hi; ++i) column.push_back(av(i, j));
      std::sort(column.begin(), column.end());
      T acc = T(0);
      for (T v : column) acc += v;
      out(s, j) = acc / T(hi - lo);
    }
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "segment_mean", {pa},
                                [pa, offsets, segs, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t s = 0; s < segs; ++s) {
      const int lo = offsets[s], hi = offsets[s + 1];
      const T inv = T(1) / T(hi - lo);
      for (int i = lo; i < hi; ++i) {
        for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(s, j) * inv;
      }
    }
  });
}

// Max over row segments; the gradient goes to the first maximal row.
template <typename T>
Var<T> segment_max(const Var<T>& a, const std::vector<int>& offsets) {
  const auto& av = a.value();
  detail::require(offsets.size() >= 2 && offsets.front() == 0 &&
                      std::size_t(offsets.back()) == av.rows(),
                  "segment_max", "offsets must span all rows");
  const std::size_t segs = offsets.size() - 1, c = av.cols();
  Tensor<T> out(segs, c);
  std::vector<int> arg(segs * c);
  for (std::size_t s = 0; s < segs; ++s) {
    detail::require(offsets[s + 1] > offsets[s], "segment_max", "empty segment");
    for (std::size_t j = 0; j < c; ++j) {
      int best = offsets[s];
      for (int i = offsets[s] + 1; i < offsets[s + 1]; ++i) {
        if (av(i, j) > av(best, j)) best = i;
      }
      arg[s * c + j] = best;
      out(s, j) = av(best, j);
    }
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "segment_max", {pa},
                                [pa, arg, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t k = 0; k < arg.size(); ++k) {
      g(arg[k], k % c) += self.grad[k];
    }
  });
}

// Row sums -> (rows x 1).
template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<T> out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < c; ++j) acc += av(i, j);
    out[i] = acc;
  }
  auto pa = a.ptr();
  return detail::make_result<T>(std::move(out), "sum_cols", {pa},
                                [pa, r, c](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T acc = T(0);
  for (T v : a.value().values()) acc += v;
  auto pa = a.ptr();
  return detail::make_result<T>(Tensor<T>::scalar(acc), "sum", {pa},
                                [pa](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  detail::require(a.value().size() > 0, "mean_all", "empty input");
  return scale(sum_all(a), T(1) / T(a.value().size()));
}

}  // namespace gmrl::ad
