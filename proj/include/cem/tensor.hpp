#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Every op that has at least one
// operand requiring a gradient records a node whose parents are the operands;
// backward() linearises the graph reachable from a scalar root into a Tape and
// replays it in reverse. Leaves accumulate into their grad buffer (+=) until
// zero_grad() is called.
//
// Supported ranks are 0 (scalar), 1 (vector) and 2 (row-major matrix).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cem/errors.hpp"

namespace cem {

// Plain row-major matrix used for data batches and chain states.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor variable(Shape shape, std::vector<double> values);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // rank 2 only
  std::size_t cols() const;  // rank 2 only

  std::span<const double> values() const;
  // Writable access for in-place parameter updates. Only valid on leaves.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Rank 1 becomes a single row.
  Matrix to_matrix() const;
  const std::string& op_name() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  std::string op;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<double> grad;  // leaves only, accumulated across backward calls
  std::vector<double> adj;   // adjoint for the current replay
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's adj and adds into parents' adj.
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  std::vector<double>& adjoint() {
    if (adj.size() != value.size()) adj.assign(value.size(), 0.0);
    return adj;
  }
};

}  // namespace detail

// Linearised view of the graph under one root, in topological order (parents
// before children). Rebuilt for every backward pass.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node*>& nodes() const { return order_; }
  // Seeds d(root)/d(root) = 1 and propagates adjoints to every node.
  void replay();

 private:
  std::vector<detail::Node*> order_;
};

// Writes d(root)/d(leaf) into every leaf that requires a gradient
// (accumulating). The root must hold exactly one element.
void backward(const Tensor& root);

// d(root)/d(t) for each t in wrt, without touching any leaf grad buffer.
std::vector<std::vector<double>> gradients(const Tensor& root,
                                           std::span<const Tensor> wrt);
std::vector<double> gradient(const Tensor& root, const Tensor& wrt);

// ---- primitive ops --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
// (N x m) + (m): bias added to every row.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);  // (N x k)(k x m)
Tensor transpose(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);  // rank 1, same length
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Rank 2: per-row sums (N).
Tensor row_sum(const Tensor& a);
// Rank 1: scalar. Rank 2: per-row (N). Max-shifted.
Tensor logsumexp(const Tensor& a);
// Along the last axis, computed as exp(a - logsumexp(a)).
Tensor softmax(const Tensor& a);
// Rank 1: scalar squared norm. Rank 2: per-row (N).
Tensor sq_norm(const Tensor& a);
// a: (N x K), picks a[i, index[i]] -> (N).
Tensor pick(const Tensor& a, std::span<const std::size_t> index);
// (N x m) -> (N*times x m); row i is repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& a, std::size_t times);
Tensor reshape(const Tensor& a, Shape shape);
// Row-wise dot products of two (N x m) tensors -> (N).
Tensor rows_dot(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace cem
