// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors.
//
// Every op returns a fresh Node holding its forward value, its parents and a
// closure that pushes an output gradient back into the parents' gradients.
// Nodes that do not depend on any parameter drop their parents and closure, so
// constant sub-graphs cost nothing at backward time. Parameters are long-lived
// leaf nodes shared by every graph built during training; backward never
// mutates them, so distinct graphs can be differentiated on distinct threads.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iatn/error.hpp"
#include "iatn/ndgrad/rng.hpp"
#include "iatn/ndgrad/tensor.hpp"

namespace iatn::nd {

enum class Mode { train, eval };

class Node;
using Var = std::shared_ptr<Node>;

/// Gradient of a scalar loss keyed by parameter name.
using Gradients = std::map<std::string, Tensor>;

class Node {
 public:
  using BackwardFn = std::function<void(const Node& self, const Tensor& grad,
                                        std::span<Tensor* const> input_grads)>;

  Node(std::string op, Tensor value) : op_(std::move(op)), value_(std::move(value)) {}

  const Tensor& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  const std::string& op() const { return op_; }
  const std::vector<Var>& inputs() const { return inputs_; }
  const Tensor& input_value(std::size_t i) const { return inputs_[i]->value_; }
  bool requires_grad() const { return requires_grad_; }
  bool is_parameter() const { return is_parameter_; }
  const std::string& name() const { return name_; }

  /// Parameter storage; written by the optimizer and the checkpoint loader.
  Tensor& mutable_value() {
    if (!is_parameter_) throw Error("mutable_value() on non-parameter node '" + op_ + "'");
    return value_;
  }

  friend Var make_node(std::string op, Tensor value, std::vector<Var> inputs,
                       BackwardFn fn);
  friend Var parameter(std::string name, Tensor value);

 private:
  std::string op_;
  Tensor value_;
  std::vector<Var> inputs_;
  BackwardFn backward_;
  std::string name_;
  bool requires_grad_ = false;
  bool is_parameter_ = false;

  friend Gradients backward(const Var& loss);
};

inline Var make_node(std::string op, Tensor value, std::vector<Var> inputs,
                     Node::BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + op + "'");
  }
  auto node = std::make_shared<Node>(std::move(op), std::move(value));
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v->requires_grad(); });
  if (needs) {
    node->requires_grad_ = true;
    node->inputs_ = std::move(inputs);
    node->backward_ = std::move(fn);
  }
  return node;
}

inline Var constant(Tensor value) {
  return make_node("constant", std::move(value), {}, nullptr);
}

inline Var parameter(std::string name, Tensor value) {
  auto node = std::make_shared<Node>("parameter", std::move(value));
  node->name_ = std::move(name);
  node->is_parameter_ = true;
  node->requires_grad_ = true;
  return node;
}

/// Gradient of `loss` (a single-element tensor) with respect to every
/// parameter it depends on. Parameters the loss does not reach are absent.
/// Shared sub-expressions accumulate their gradient contributions.
inline Gradients backward(const Var& loss) {
  if (loss->value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss->shape()));
  }
  Gradients result;
  if (!loss->requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs_.size()) {
      Node* child = node->inputs_[next++].get();
      if (child->requires_grad_ && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Tensor> grads;
  grads.emplace(loss.get(), Tensor(loss->shape(), 1.0));
  std::vector<Tensor*> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->is_parameter_) {
      auto [slot, inserted] = result.try_emplace(node->name_, std::move(found->second));
      if (!inserted) slot->second += found->second;
      grads.erase(found);
      continue;
    }
    input_grads.clear();
    for (const Var& in : node->inputs_) {
      if (!in->requires_grad_) {
        input_grads.push_back(nullptr);
        continue;
      }
      auto [slot, _] = grads.try_emplace(in.get(), in->shape(), 0.0);
      input_grads.push_back(&slot->second);
    }
    node->backward_(*node, found->second, input_grads);
    grads.erase(node);
  }
  return result;
}

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape()) +
                     " vs " + shape_str(b->shape()));
  }
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a->value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(a->shape()));
  }
}

template <typename F, typename DF>
Var unary(const char* op, const Var& a, F f, DF df_from_xy) {
  Tensor out(a->shape());
  const Tensor& x = a->value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_node(op, std::move(out), {a},
                   [df_from_xy](const Node& self, const Tensor& g,
                                std::span<Tensor* const> gin) {
                     const Tensor& x = self.input_value(0);
                     const Tensor& y = self.value();
                     Tensor& gx = *gin[0];
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       gx[i] += g[i] * df_from_xy(x[i], y[i]);
                     }
                   });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix-matrix (m x k)(k x n), matrix-vector (m x k)(k) or vector-matrix
/// (k)(k x n) product.
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value();
  const Tensor& B = b->value();
  auto mismatch = [&] {
    return ShapeError("matmul: inner dimensions differ " + shape_str(A.shape()) +
                      " vs " + shape_str(B.shape()));
  };
  if (A.rank() == 2 && B.rank() == 2) {
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) throw mismatch();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * B.at(p, j);
      }
    }
    return make_node("matmul", std::move(out), {a, b},
                     [m, k, n](const Node& self, const Tensor& g,
                               std::span<Tensor* const> gin) {
                       const Tensor& A = self.input_value(0);
                       const Tensor& B = self.input_value(1);
                       if (gin[0]) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * B.at(p, j);
                             gin[0]->at(i, p) += s;
                           }
                       }
                       if (gin[1]) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A.at(i, p);
                             for (std::size_t j = 0; j < n; ++j)
                               gin[1]->at(p, j) += aip * g.at(i, j);
                           }
                       }
                     });
  }
  if (A.rank() == 2 && B.rank() == 1) {
    const std::size_t m = A.rows(), k = A.cols();
    if (B.size() != k) throw mismatch();
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = A.data().data() + i * k;
      for (std::size_t p = 0; p < k; ++p) s += row[p] * B[p];
      out[i] = s;
    }
    return make_node("matmul", std::move(out), {a, b},
                     [m, k](const Node& self, const Tensor& g,
                            std::span<Tensor* const> gin) {
                       const Tensor& A = self.input_value(0);
                       const Tensor& x = self.input_value(1);
                       if (gin[0]) {
                         double* ga = gin[0]->data().data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double gi = g[i];
                           if (gi == 0.0) continue;
                           for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gi * x[p];
                         }
                       }
                       if (gin[1]) {
                         Tensor& gx = *gin[1];
                         const double* a = A.data().data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double gi = g[i];
                           if (gi == 0.0) continue;
                           for (std::size_t p = 0; p < k; ++p) gx[p] += a[i * k + p] * gi;
                         }
                       }
                     });
  }
  if (A.rank() == 1 && B.rank() == 2) {
    const std::size_t k = B.rows(), n = B.cols();
    if (A.size() != k) throw mismatch();
    Tensor out({n});
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = A[p];
      if (ap == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[j] += ap * B.at(p, j);
    }
    return make_node("matmul", std::move(out), {a, b},
                     [k, n](const Node& self, const Tensor& g,
                            std::span<Tensor* const> gin) {
                       const Tensor& x = self.input_value(0);
                       const Tensor& B = self.input_value(1);
                       if (gin[0]) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < n; ++j) s += B.at(p, j) * g[j];
                           (*gin[0])[p] += s;
                         }
                       }
                       if (gin[1]) {
                         for (std::size_t p = 0; p < k; ++p)
                           for (std::size_t j = 0; j < n; ++j)
                             gin[1]->at(p, j) += x[p] * g[j];
                       }
                     });
  }
  throw mismatch();
}

/// W x + b for a matrix W (m x k), vector x (k) and bias b (m).
inline Var affine(const Var& w, const Var& x, const Var& b) {
  const Tensor& W = w->value();
  const Tensor& X = x->value();
  const Tensor& B = b->value();
  if (W.rank() != 2 || X.rank() != 1 || B.rank() != 1 || W.cols() != X.size() ||
      W.rows() != B.size()) {
    throw ShapeError("affine: shape mismatch W" + shape_str(W.shape()) + " x" +
                     shape_str(X.shape()) + " b" + shape_str(B.shape()));
  }
  const std::size_t m = W.rows(), k = W.cols();
  Tensor out = B;
  const double* wd = W.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += wd[i * k + p] * X[p];
    out[i] += s;
  }
  return make_node("affine", std::move(out), {w, x, b},
                   [m, k](const Node& self, const Tensor& g,
                          std::span<Tensor* const> gin) {
                     const Tensor& W = self.input_value(0);
                     const Tensor& X = self.input_value(1);
                     const double* wd = W.data().data();
                     if (gin[0]) {
                       double* gw = gin[0]->data().data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double gi = g[i];
                         if (gi == 0.0) continue;
                         for (std::size_t p = 0; p < k; ++p) gw[i * k + p] += gi * X[p];
                       }
                     }
                     if (gin[1]) {
                       Tensor& gx = *gin[1];
                       for (std::size_t i = 0; i < m; ++i) {
                         const double gi = g[i];
                         if (gi == 0.0) continue;
                         for (std::size_t p = 0; p < k; ++p) gx[p] += wd[i * k + p] * gi;
                       }
                     }
                     if (gin[2]) *gin[2] += g;
                   });
}

inline Var transpose(const Var& a) {
  detail::require_rank("transpose", a, 2);
  const Tensor& A = a->value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return make_node("transpose", std::move(out), {a},
                   [m, n](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gin[0]->at(i, j) += g.at(j, i);
                   });
}

// ---------------------------------------------------------------------------
// Pointwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a->value();
  out += b->value();
  return make_node("add", std::move(out), {a, b},
                   [](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     if (gin[0]) *gin[0] += g;
                     if (gin[1]) *gin[1] += g;
                   });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a->value();
  const Tensor& B = b->value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return make_node("sub", std::move(out), {a, b},
                   [](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     if (gin[0]) *gin[0] += g;
                     if (gin[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                   });
}

/// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("pointwise_mul", a, b);
  Tensor out = a->value();
  const Tensor& B = b->value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return make_node("pointwise_mul", std::move(out), {a, b},
                   [](const Node& self, const Tensor& g, std::span<Tensor* const> gin) {
                     const Tensor& A = self.input_value(0);
                     const Tensor& B = self.input_value(1);
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * B[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * A[i];
                   });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a->value();
  for (double& v : out.data()) v *= c;
  return make_node("scalar_scale", std::move(out), {a},
                   [c](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += c * g[i];
                   });
}

/// a + c elementwise.
inline Var shift(const Var& a, double c) {
  Tensor out = a->value();
  for (double& v : out.data()) v += c;
  return make_node("shift", std::move(out), {a},
                   [](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     *gin[0] += g;
                   });
}

inline Var sigmoid(const Var& a) {
  return detail::unary("sigmoid", a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Softmax over a vector, or over the last axis of a matrix. Max-subtracted.
inline Var softmax(const Var& a) {
  const Tensor& x = a->value();
  if (x.rank() > 2) throw ShapeError("softmax: unsupported shape " + shape_str(x.shape()));
  const std::size_t width = x.rank() == 2 ? x.cols() : x.size();
  const std::size_t rows = x.size() / width;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * width;
    double* o = out.data().data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      o[i] = std::exp(in[i] - mx);
      total += o[i];
    }
    for (std::size_t i = 0; i < width; ++i) o[i] /= total;
  }
  return make_node("softmax", std::move(out), {a},
                   [rows, width](const Node& self, const Tensor& g,
                                 std::span<Tensor* const> gin) {
                     const Tensor& y = self.value();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const std::size_t off = r * width;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < width; ++i) dot += g[off + i] * y[off + i];
                       for (std::size_t i = 0; i < width; ++i)
                         (*gin[0])[off + i] += y[off + i] * (g[off + i] - dot);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Structural

/// Concatenates vectors end to end.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_rank("concat", p, 1);
    total += p->value().size();
  }
  Tensor out({total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p->value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + off);
    off += v.size();
  }
  return make_node("concat", std::move(out), parts,
                   [](const Node& self, const Tensor& g, std::span<Tensor* const> gin) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < gin.size(); ++k) {
                       const std::size_t n = self.input_value(k).size();
                       if (gin[k])
                         for (std::size_t i = 0; i < n; ++i) (*gin[k])[i] += g[off + i];
                       off += n;
                     }
                   });
}

/// Stacks vectors (as rows) and matrices into one matrix, top to bottom.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0]->value().rank() == 2 ? parts[0]->value().cols()
                                                         : parts[0]->value().size();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    const Tensor& v = p->value();
    const std::size_t c = v.rank() == 2 ? v.cols() : v.size();
    if (v.rank() > 2 || c != cols) {
      throw ShapeError("concat_rows: width mismatch " + shape_str(parts[0]->shape()) +
                       " vs " + shape_str(v.shape()));
    }
    rows += v.size() / cols;
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p->value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + off);
    off += v.size();
  }
  return make_node("concat_rows", std::move(out), parts,
                   [](const Node& self, const Tensor& g, std::span<Tensor* const> gin) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < gin.size(); ++k) {
                       const std::size_t n = self.input_value(k).size();
                       if (gin[k])
                         for (std::size_t i = 0; i < n; ++i) (*gin[k])[i] += g[off + i];
                       off += n;
                     }
                   });
}

inline Var row(const Var& m, std::size_t index) {
  detail::require_rank("row", m, 2);
  const Tensor& M = m->value();
  if (index >= M.rows()) {
    throw ShapeError("row: index " + std::to_string(index) + " outside " +
                     shape_str(M.shape()));
  }
  const std::size_t n = M.cols();
  std::vector<double> vals(M.data().begin() + index * n, M.data().begin() + (index + 1) * n);
  return make_node("row", Tensor::vector(std::move(vals)), {m},
                   [index, n](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     double* dst = gin[0]->data().data() + index * n;
                     for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
                   });
}

/// Rows of the table `x` selected by `ids`, as an (|ids| x d) matrix.
/// Repeated ids accumulate gradient into the same row.
inline Var embedding_lookup(const Var& x, std::vector<int> ids) {
  detail::require_rank("embedding_lookup", x, 2);
  const Tensor& X = x->value();
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  const std::size_t d = X.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= X.rows()) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[r]) +
                       " out of range for table " + shape_str(X.shape()));
    }
    std::copy_n(X.data().begin() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data().begin() + r * d);
  }
  return make_node("embedding_lookup", std::move(out), {x},
                   [ids = std::move(ids), d](const Node&, const Tensor& g,
                                             std::span<Tensor* const> gin) {
                     double* gx = gin[0]->data().data();
                     for (std::size_t r = 0; r < ids.size(); ++r) {
                       double* dst = gx + static_cast<std::size_t>(ids[r]) * d;
                       for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Reductions

/// Column sums of a matrix: (m x n) -> (n).
inline Var sum_rows(const Var& m) {
  detail::require_rank("sum_rows", m, 2);
  const Tensor& M = m->value();
  const std::size_t rows = M.rows(), cols = M.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += M.at(r, c);
  return make_node("sum_rows", std::move(out), {m},
                   [rows, cols](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c) gin[0]->at(r, c) += g[c];
                   });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value().data()) s += v;
  return make_node("sum", Tensor::scalar(s), {a},
                   [](const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     const double gv = g[0];
                     for (double& v : gin[0]->data()) v += gv;
                   });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->value().size()));
}

/// out[index[i]] += weight[i] * v[i], producing a vector of `out_size`.
inline Var scatter_add(const Var& v, std::vector<int> index, std::vector<double> weight,
                       std::size_t out_size) {
  detail::require_rank("scatter_add", v, 1);
  const Tensor& V = v->value();
  if (index.size() != V.size() || weight.size() != V.size()) {
    throw ShapeError("scatter_add: index/weight length differs from input " +
                     shape_str(V.shape()));
  }
  Tensor out({out_size});
  for (std::size_t i = 0; i < V.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= out_size) {
      throw ShapeError("scatter_add: index " + std::to_string(index[i]) +
                       " outside output size " + std::to_string(out_size));
    }
    out[static_cast<std::size_t>(index[i])] += weight[i] * V[i];
  }
  return make_node("scatter_add", std::move(out), {v},
                   [index = std::move(index), weight = std::move(weight)](
                       const Node&, const Tensor& g, std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < index.size(); ++i)
                       (*gin[0])[i] += weight[i] * g[static_cast<std::size_t>(index[i])];
                   });
}

// ---------------------------------------------------------------------------
// Regularization and losses

/// Inverted dropout. Identity in eval mode or at rate 0.
inline Var dropout(const Var& x, double rate, Mode mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  if (rng == nullptr) throw Error("dropout: train mode requires an rng");
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x->shape());
  for (double& m : mask.data()) m = rng->uniform() >= rate ? keep_scale : 0.0;
  Tensor out = x->value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node("dropout", std::move(out), {x},
                   [mask = std::move(mask)](const Node&, const Tensor& g,
                                            std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * mask[i];
                   });
}

/// Mean binary cross-entropy of sigmoid(logits) against targets, evaluated
/// as max(x,0) - x t + log(1 + exp(-|x|)) so it never takes log(0).
inline Var bce_with_logits(const Var& logits, const Tensor& target) {
  const Tensor& x = logits->value();
  if (x.size() != target.size()) {
    throw ShapeError("bce_loss: length mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += std::max(x[i], 0.0) - x[i] * target[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  return make_node("bce_with_logits", Tensor::scalar(total / n), {logits},
                   [target, n](const Node& self, const Tensor& g,
                               std::span<Tensor* const> gin) {
                     const Tensor& x = self.input_value(0);
                     for (std::size_t i = 0; i < x.size(); ++i) {
                       (*gin[0])[i] += g[0] * (detail::stable_sigmoid(x[i]) - target[i]) / n;
                     }
                   });
}

/// Mean binary cross-entropy over probabilities y in (0,1). When y is a
/// sigmoid node the loss is taken from its logits instead.
inline Var bce_loss(const Var& y, const Tensor& target) {
  if (y->op() == "sigmoid" && !y->inputs().empty()) {
    return bce_with_logits(y->inputs()[0], target);
  }
  const Tensor& p = y->value();
  if (p.size() != target.size()) {
    throw ShapeError("bce_loss: length mismatch " + shape_str(p.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw NumericError("bce_loss: probability " + std::to_string(p[i]) +
                         " outside (0, 1)");
    }
    total -= target[i] * std::log(p[i]) + (1.0 - target[i]) * std::log1p(-p[i]);
  }
  return make_node("bce", Tensor::scalar(total / n), {y},
                   [target, n](const Node& self, const Tensor& g,
                               std::span<Tensor* const> gin) {
                     const Tensor& p = self.input_value(0);
                     for (std::size_t i = 0; i < p.size(); ++i) {
                       (*gin[0])[i] +=
                           g[0] * (-target[i] / p[i] + (1.0 - target[i]) / (1.0 - p[i])) / n;
                     }
                   });
}

}  // namespace iatn::nd
