#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Variable is a handle to a graph node; operations build the
// graph eagerly and Variable::backward() walks it in reverse topological
// order. Leaf gradients accumulate across backward calls until zero_grad().

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "reveal/matrix.hpp"

namespace reveal::ag {

class Variable {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out)>;

  Variable() = default;
  explicit Variable(Matrix value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  // Mutable access for optimizers and finite-difference probes. Mutating a
  // value that is part of a live graph invalidates that graph.
  Matrix& mutable_value();
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // Zero matrix of the value's shape when no gradient has arrived.
  const Matrix& grad() const;
  bool has_grad() const;
  void zero_grad();
  void accumulate_grad(const Matrix& delta) const;

  // Seeds the output with ones (or `seed`) and propagates.
  void backward() const;
  void backward(const Matrix& seed) const;

  // Same value, no history.
  Variable detach() const;

  bool same_node(const Variable& other) const { return node_ == other.node_; }

  // Builds an interior node. `fn` receives d(loss)/d(output) and must call
  // accumulate_grad on the inputs it captured. If no input requires a
  // gradient the history is dropped.
  static Variable make_op(Matrix value, std::vector<Variable> inputs, BackwardFn fn);

 private:
  struct Node;
  std::shared_ptr<Node> node_;
};

// While alive on a thread, new operations record no history (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Variable constant(Matrix value);

Variable matmul(const Variable& a, const Variable& b);
// a * b^T
Variable matmul_nt(const Variable& a, const Variable& b);
Variable add(const Variable& a, const Variable& b);
// a + broadcast of the 1 x cols row `bias` to every row.
Variable add_row(const Variable& a, const Variable& bias);
Variable scale(const Variable& a, double factor);
// x * w + b, with w stored [in x out] and b [1 x out].
Variable linear(const Variable& x, const Variable& w, const Variable& b);
// Exact (erf) GELU.
Variable gelu(const Variable& a);
Variable layer_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    double eps = 1e-5);
// Scaled dot-product attention with `heads` column groups. q: [n x H],
// k, v: [m x H]. Returns [n x H] before the output projection.
Variable multi_head_attention(const Variable& q, const Variable& k, const Variable& v,
                              int heads);
// Each row divided by its L2 norm. Throws DegenerateVector when a norm is
// below `min_norm`.
Variable normalize_rows(const Variable& a, double min_norm = 1e-12);
Variable concat_rows(std::span<const Variable> parts);
Variable sum(const Variable& a);

inline Variable operator+(const Variable& a, const Variable& b) { return add(a, b); }

}  // namespace reveal::ag
