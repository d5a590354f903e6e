#include "cem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace cem {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("Matrix", "expected " + std::to_string(r * c) +
                                   " values, got " + std::to_string(data.size()));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m;
  m.rows = rows.size();
  m.cols = rows.size() == 0 ? 0 : rows.begin()->size();
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw ShapeError("Matrix::from_rows", "ragged rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.size() > 2) {
    throw ShapeError("tensor", "rank " + std::to_string(shape.size()) +
                                   " unsupported " + shape_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor", "shape " + shape_string(shape) + " needs " +
                                   std::to_string(element_count(shape)) +
                                   " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->op = "leaf";
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Records an interior node when any parent carries a gradient; otherwise the
// result is a plain constant and the backward closure is dropped.
Tensor make_result(std::string op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Tensor(node);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  require_defined(a, op);
  if (a.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got shape " +
                             shape_string(a.shape()));
  }
}

template <typename F>
Tensor unary(const char* op, const Tensor& a, F forward,
             std::function<void(Node&)> bw) {
  require_defined(a, op);
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(op, a.shape(), std::move(out), {a.node_ptr()}, std::move(bw));
}

double lse_span(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  return Tensor(make_leaf({m.rows, m.cols}, m.data, requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows", "not a matrix " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols", "not a matrix " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw ContractError("mutable_values: tensor is not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item: tensor of shape " + shape_string(shape()) +
                        " is not a scalar");
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Matrix Tensor::to_matrix() const {
  if (rank() == 2) return Matrix(shape()[0], shape()[1], node_->value);
  if (rank() == 1) return Matrix(1, shape()[0], node_->value);
  return Matrix(1, 1, node_->value);
}

const std::string& Tensor::op_name() const { return node_->op; }

// ---- Tape ------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay() {
  if (order_.empty()) return;
  for (Node* n : order_) n->adj.assign(n->value.size(), 0.0);
  order_.back()->adj[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (!n->leaf && n->backward) n->backward(*n);
  }
}

namespace {

void require_scalar_root(const Tensor& root, const char* op) {
  require_defined(root, op);
  if (root.size() != 1) {
    throw ContractError(std::string(op) + ": root must be a scalar, got shape " +
                        shape_string(root.shape()));
  }
}

}  // namespace

void backward(const Tensor& root) {
  require_scalar_root(root, "backward");
  Tape tape = Tape::record(root);
  tape.replay();
  for (Node* n : tape.nodes()) {
    if (n->leaf) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
      for (std::size_t i = 0; i < n->adj.size(); ++i) n->grad[i] += n->adj[i];
    }
    n->adj.clear();
  }
}

std::vector<std::vector<double>> gradients(const Tensor& root,
                                           std::span<const Tensor> wrt) {
  require_scalar_root(root, "gradients");
  Tape tape = Tape::record(root);
  tape.replay();
  std::vector<std::vector<double>> out;
  out.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    const auto& adj = t.node()->adj;
    if (adj.size() == t.size()) {
      out.push_back(adj);
    } else {
      out.emplace_back(t.size(), 0.0);
    }
  }
  for (Node* n : tape.nodes()) n->adj.clear();
  return out;
}

std::vector<double> gradient(const Tensor& root, const Tensor& wrt) {
  return gradients(root, std::span<const Tensor>(&wrt, 1)).front();
}

// ---- ops ---------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& n) {
                       for (auto& p : n.parents) {
                         if (!p->requires_grad) continue;
                         auto& g = p->adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& n) {
                       if (n.parents[0]->requires_grad) {
                         auto& g = n.parents[0]->adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
                       }
                       if (n.parents[1]->requires_grad) {
                         auto& g = n.parents[1]->adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.adj[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& n) {
                       Node& pa = *n.parents[0];
                       Node& pb = *n.parents[1];
                       if (pa.requires_grad) {
                         auto& g = pa.adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += n.adj[i] * pb.value[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += n.adj[i] * pa.value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.adj[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank("add_row", a, 2);
  require_rank("add_row", bias, 1);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (bias.size() != cols) throw ShapeError("add_row", a.shape(), bias.shape());
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] + bias[c];
  return make_result("add_row", a.shape(), std::move(out),
                     {a.node_ptr(), bias.node_ptr()}, [rows, cols](Node& n) {
                       if (n.parents[0]->requires_grad) {
                         auto& g = n.parents[0]->adjoint();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
                       }
                       if (n.parents[1]->requires_grad) {
                         auto& g = n.parents[1]->adjoint();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c)
                             g[c] += n.adj[r * cols + c];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError("matmul", a.shape(), b.shape());
  std::vector<double> out(n * m, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  return make_result("matmul", {n, m}, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [n, k, m](Node& node) {
                       Node& pa = *node.parents[0];
                       Node& pb = *node.parents[1];
                       const auto& go = node.adj;
                       if (pa.requires_grad) {
                         auto& ga = pa.adjoint();  // go * b^T
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < m; ++j)
                               s += go[i * m + j] * pb.value[p * m + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.adjoint();  // a^T * go
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = pa.value[i * k + p];
                             if (aip == 0.0) continue;
                             for (std::size_t j = 0; j < m; ++j)
                               gb[p * m + j] += aip * go[i * m + j];
                           }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a.node_ptr()},
                     [r, c](Node& n) {
                       auto& g = n.parents[0]->adjoint();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.adj[j * r + i];
                     });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank("dot", a, 1);
  require_rank("dot", b, 1);
  if (a.size() != b.size()) throw ShapeError("dot", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return make_result("dot", {}, {s}, {a.node_ptr(), b.node_ptr()}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double go = n.adj[0];
    if (pa.requires_grad) {
      auto& g = pa.adjoint();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.adjoint();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pa.value[i];
    }
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i] * n.value[i];
  });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(a[i]) +
                        " at index " + std::to_string(i));
    }
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.adjoint();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i] / p.value[i];
  });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += n.adj[i] * (1.0 - n.value[i] * n.value[i]);
  });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.adjoint();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0.0) g[i] += n.adj[i];
  });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.adjoint();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.value[i] * n.adj[i];
  });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result("sum", {}, {s}, {a.node_ptr()}, [](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (double& gi : g) gi += n.adj[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("mean", "empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result("mean", {}, {s * inv}, {a.node_ptr()}, [inv](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (double& gi : g) gi += n.adj[0] * inv;
  });
}

Tensor row_sum(const Tensor& a) {
  require_rank("row_sum", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a[i * c + j];
  return make_result("row_sum", {r}, std::move(out), {a.node_ptr()}, [r, c](Node& n) {
    auto& g = n.parents[0]->adjoint();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.adj[i];
  });
}

Tensor logsumexp(const Tensor& a) {
  require_defined(a, "logsumexp");
  if (a.rank() == 0 || a.size() == 0) {
    throw ShapeError("logsumexp", "needs a non-empty vector or matrix, got " +
                                      shape_string(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t cols = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  if (cols == 0) throw ShapeError("logsumexp", "zero-width rows");
  std::vector<double> out(rows);
  auto v = a.values();
  for (std::size_t i = 0; i < rows; ++i) out[i] = lse_span(v.subspan(i * cols, cols));
  Shape shape = a.rank() == 2 ? Shape{rows} : Shape{};
  return make_result("logsumexp", shape, std::move(out), {a.node_ptr()},
                     [rows, cols](Node& n) {
                       Node& p = *n.parents[0];
                       auto& g = p.adjoint();
                       for (std::size_t i = 0; i < rows; ++i) {
                         const double go = n.adj[i];
                         for (std::size_t j = 0; j < cols; ++j)
                           g[i * cols + j] += go * std::exp(p.value[i * cols + j] - n.value[i]);
                       }
                     });
}

Tensor softmax(const Tensor& a) {
  require_defined(a, "softmax");
  if (a.rank() == 0 || a.size() == 0) {
    throw ShapeError("softmax", "needs a non-empty vector or matrix, got " +
                                    shape_string(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t cols = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(a.size());
  auto v = a.values();
  for (std::size_t i = 0; i < rows; ++i) {
    const double lse = lse_span(v.subspan(i * cols, cols));
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = std::exp(v[i * cols + j] - lse);
  }
  return make_result("softmax", a.shape(), std::move(out), {a.node_ptr()},
                     [rows, cols](Node& n) {
                       // dL/da_j = p_j (g_j - sum_k p_k g_k)
                       auto& g = n.parents[0]->adjoint();
                       for (std::size_t i = 0; i < rows; ++i) {
                         double inner = 0.0;
                         for (std::size_t j = 0; j < cols; ++j)
                           inner += n.value[i * cols + j] * n.adj[i * cols + j];
                         for (std::size_t j = 0; j < cols; ++j)
                           g[i * cols + j] += n.value[i * cols + j] * (n.adj[i * cols + j] - inner);
                       }
                     });
}

Tensor sq_norm(const Tensor& a) {
  require_defined(a, "sq_norm");
  if (a.rank() == 0) throw ShapeError("sq_norm", "scalar input");
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t cols = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += a[i * cols + j] * a[i * cols + j];
  Shape shape = a.rank() == 2 ? Shape{rows} : Shape{};
  return make_result("sq_norm", shape, std::move(out), {a.node_ptr()},
                     [rows, cols](Node& n) {
                       Node& p = *n.parents[0];
                       auto& g = p.adjoint();
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t j = 0; j < cols; ++j)
                           g[i * cols + j] += 2.0 * p.value[i * cols + j] * n.adj[i];
                     });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  require_rank("pick", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (index.size() != rows) {
    throw ShapeError("pick", a.shape(), Shape{index.size()});
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (idx[i] >= cols) {
      throw ContractError("pick: index " + std::to_string(idx[i]) +
                          " out of range for " + std::to_string(cols) + " columns");
    }
    out[i] = a[i * cols + idx[i]];
  }
  return make_result("pick", {rows}, std::move(out), {a.node_ptr()},
                     [idx = std::move(idx), cols](Node& n) {
                       auto& g = n.parents[0]->adjoint();
                       for (std::size_t i = 0; i < idx.size(); ++i) g[i * cols + idx[i]] += n.adj[i];
                     });
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  require_rank("repeat_rows", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out;
  out.reserve(rows * times * cols);
  auto v = a.values();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t t = 0; t < times; ++t)
      out.insert(out.end(), v.begin() + i * cols, v.begin() + (i + 1) * cols);
  return make_result("repeat_rows", {rows * times, cols}, std::move(out), {a.node_ptr()},
                     [rows, cols, times](Node& n) {
                       auto& g = n.parents[0]->adjoint();
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t t = 0; t < times; ++t)
                           for (std::size_t j = 0; j < cols; ++j)
                             g[i * cols + j] += n.adj[(i * times + t) * cols + j];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (element_count(shape) != a.size() || shape.size() > 2) {
    throw ShapeError("reshape", a.shape(), shape);
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a.node_ptr()},
                     [](Node& n) {
                       auto& g = n.parents[0]->adjoint();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
                     });
}

Tensor rows_dot(const Tensor& a, const Tensor& b) {
  require_rank("rows_dot", a, 2);
  require_same_shape("rows_dot", a, b);
  return row_sum(mul(a, b));
}

}  // namespace cem
