#include "reveal/autograd.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include "reveal/errors.hpp"

namespace reveal::ag {

struct Variable::Node {
  Matrix value;
  Matrix grad;  // empty until the first gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;
};

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + "]";
}

void require_same_shape(const Variable& a, const Variable& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

}  // namespace

Variable::Variable(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Matrix& Variable::value() const { return node_->value; }
Matrix& Variable::mutable_value() { return node_->value; }

double Variable::scalar() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("scalar(): value is " + shape_str(value()));
  }
  return value()(0, 0);
}

bool Variable::requires_grad() const { return node_ && node_->requires_grad; }
void Variable::set_requires_grad(bool flag) { node_->requires_grad = flag; }

const Matrix& Variable::grad() const {
  if (node_->grad.size() == 0) {
    node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

bool Variable::has_grad() const { return node_->grad.size() != 0; }

void Variable::zero_grad() { node_->grad.resize(0, 0); }

void Variable::accumulate_grad(const Matrix& delta) const {
  if (!node_->requires_grad) return;
  if (node_->grad.size() == 0) {
    node_->grad = delta;
  } else {
    node_->grad += delta;
  }
}

void Variable::backward() const {
  backward(Matrix::Ones(node_->value.rows(), node_->value.cols()));
}

void Variable::backward(const Matrix& seed) const {
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(node->grad);
  }
}

Variable Variable::detach() const { return Variable(value(), false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Variable Variable::make_op(Matrix value, std::vector<Variable> inputs, BackwardFn fn) {
  Variable out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward_fn = std::move(fn);
  }
  return out;
}

Variable constant(Matrix value) { return Variable(std::move(value), false); }

Variable matmul(const Variable& a, const Variable& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return Variable::make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) a.accumulate_grad(g * b.value().transpose());
    if (b.requires_grad()) b.accumulate_grad(a.value().transpose() * g);
  });
}

Variable matmul_nt(const Variable& a, const Variable& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a.value()) + " * " + shape_str(b.value()) + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  return Variable::make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) a.accumulate_grad(g * b.value());
    if (b.requires_grad()) b.accumulate_grad(g.transpose() * a.value());
  });
}

Variable add(const Variable& a, const Variable& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return Variable::make_op(std::move(out), {a, b}, [a, b](const Matrix& g) {
    a.accumulate_grad(g);
    b.accumulate_grad(g);
  });
}

Variable add_row(const Variable& a, const Variable& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + shape_str(bias.value()) + " for " + shape_str(a.value()));
  }
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return Variable::make_op(std::move(out), {a, bias}, [a, bias](const Matrix& g) {
    a.accumulate_grad(g);
    if (bias.requires_grad()) bias.accumulate_grad(g.colwise().sum());
  });
}

Variable scale(const Variable& a, double factor) {
  Matrix out = a.value() * factor;
  return Variable::make_op(std::move(out), {a},
                           [a, factor](const Matrix& g) { a.accumulate_grad(g * factor); });
}

Variable linear(const Variable& x, const Variable& w, const Variable& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("linear: input " + shape_str(x.value()) + ", weight " + shape_str(w.value()) +
                     ", bias " + shape_str(b.value()));
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return Variable::make_op(std::move(out), {x, w, b}, [x, w, b](const Matrix& g) {
    if (x.requires_grad()) x.accumulate_grad(g * w.value().transpose());
    if (w.requires_grad()) w.accumulate_grad(x.value().transpose() * g);
    if (b.requires_grad()) b.accumulate_grad(g.colwise().sum());
  });
}

Variable gelu(const Variable& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix slope(x.rows(), x.cols());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    out.data()[i] = v * cdf;
    slope.data()[i] = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  return Variable::make_op(std::move(out), {a}, [a, slope = std::move(slope)](const Matrix& g) {
    a.accumulate_grad(g.cwiseProduct(slope));
  });
}

Variable layer_norm(const Variable& x, const Variable& gamma, const Variable& beta, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm: parameters do not match width " + std::to_string(d));
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mean) * inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return Variable::make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
        if (gamma.requires_grad()) gamma.accumulate_grad(g.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad()) beta.accumulate_grad(g.colwise().sum());
        if (!x.requires_grad()) return;
        Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Index i = 0; i < dxhat.rows(); ++i) {
          const double mean_d = dxhat.row(i).mean();
          const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(dxhat.cols());
          dx.row(i) = inv_std(i) * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx);
        }
        x.accumulate_grad(dx);
      });
}

Variable multi_head_attention(const Variable& q, const Variable& k, const Variable& v, int heads) {
  const Index width = q.cols();
  if (heads < 1 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) {
    throw ShapeError("attention: q " + shape_str(q.value()) + ", k " + shape_str(k.value()) +
                     ", v " + shape_str(v.value()));
  }
  const Index dh = width / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(q.rows(), width);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Matrix scores = (qh * kh.transpose()) * s;
    for (Index i = 0; i < scores.rows(); ++i) {
      const double mx = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - mx).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    out.middleCols(h * dh, dh) = scores * vh;
    probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  return Variable::make_op(
      std::move(out), {q, k, v}, [q, k, v, heads, dh, s, probs = std::move(probs)](const Matrix& g) {
        Matrix dq = Matrix::Zero(q.rows(), q.cols());
        Matrix dk = Matrix::Zero(k.rows(), k.cols());
        Matrix dv = Matrix::Zero(v.rows(), v.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = probs[static_cast<std::size_t>(h)];
          const auto go = g.middleCols(h * dh, dh);
          const auto qh = q.value().middleCols(h * dh, dh);
          const auto kh = k.value().middleCols(h * dh, dh);
          const auto vh = v.value().middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh) = p.transpose() * go;
          Matrix dp = go * vh.transpose();
          Eigen::VectorXd inner = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = p.cwiseProduct(dp.colwise() - inner) * s;
          dq.middleCols(h * dh, dh) = ds * kh;
          dk.middleCols(h * dh, dh) = ds.transpose() * qh;
        }
        q.accumulate_grad(dq);
        k.accumulate_grad(dk);
        v.accumulate_grad(dv);
      });
}

Variable normalize_rows(const Variable& a, double min_norm) {
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) >= min_norm)) {
      throw DegenerateVector("row " + std::to_string(i) + " of " + shape_str(x) +
                             " has norm " + std::to_string(norms(i)));
    }
  }
  Matrix out = x.array().colwise() / norms.array();
  Matrix unit = out;
  return Variable::make_op(
      std::move(out), {a},
      [a, unit = std::move(unit), norms = std::move(norms)](const Matrix& g) {
        Eigen::VectorXd along = g.cwiseProduct(unit).rowwise().sum();
        Matrix d = g - (unit.array().colwise() * along.array()).matrix();
        d.array().colwise() /= norms.array();
        a.accumulate_grad(d);
      });
}

Variable concat_rows(std::span<const Variable> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Variable> inputs(parts.begin(), parts.end());
  return Variable::make_op(std::move(out), inputs, [inputs](const Matrix& g) {
    Index off = 0;
    for (const auto& p : inputs) {
      if (p.requires_grad()) p.accumulate_grad(g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Variable sum(const Variable& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return Variable::make_op(std::move(out), {a}, [a](const Matrix& g) {
    a.accumulate_grad(Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

}  // namespace reveal::ag
