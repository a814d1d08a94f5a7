#include "edgedistill/tensor.hpp"

#include "edgedistill/errors.hpp"

#include <string>
#include <unordered_set>

namespace edgedistill {
namespace {

using detail::Node;

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

void require_defined(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a);
  require_defined(b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

void accumulate(Node& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

// Builds the result node; parents are kept only if some parent needs a gradient.
Tensor make_result(Matrix value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
  if (!value.allFinite()) throw DivergenceError("operation produced a non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return Tensor(std::move(m), requires_grad);
}

Index Tensor::rows() const { return node_->value.rows(); }
Index Tensor::cols() const { return node_->value.cols(); }
const Matrix& Tensor::value() const { return node_->value; }
Matrix& Tensor::mutable_value() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(value()));
  return node_->value(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::set_grad(Matrix grad) {
  if (grad.rows() != rows() || grad.cols() != cols()) {
    throw ShapeError("gradient shape " + shape_str(grad) + " does not match " + shape_str(value()));
  }
  node_->grad = std::move(grad);
}

void Tensor::zero_grad() { node_->grad = Matrix::Zero(rows(), cols()); }
void Tensor::clear_grad() { node_->grad.resize(0, 0); }

Tensor Tensor::detach() const { return Tensor(node_->value, false); }
Tensor Tensor::clone() const { return Tensor(node_->value, node_->requires_grad); }

void backward(const Tensor& output, const Matrix& upstream) {
  require_defined(output);
  if (!output.requires_grad()) {
    throw ContractError("backward on a tensor that is not attached to any graph");
  }
  if (upstream.rows() != output.rows() || upstream.cols() != output.cols()) {
    throw ShapeError("upstream gradient " + shape_str(upstream) + " vs output " +
                     shape_str(output.value()));
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  }
  accumulate(*output.node(), upstream);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  require_defined(loss);
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.value()));
  }
  backward(loss, Matrix::Ones(1, 1));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    accumulate(*pa, self.grad);
    accumulate(*pb, self.grad);
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return make_result(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    accumulate(*pa, self.grad);
    accumulate(*pb, -self.grad);
  });
}

Tensor operator*(const Tensor& a, double c) {
  require_defined(a);
  auto pa = a.node();
  return make_result(a.value() * c, {pa}, [pa, c](Node& self) { accumulate(*pa, self.grad * c); });
}

Tensor operator*(double c, const Tensor& a) { return a * c; }

Tensor add_scalar(const Tensor& a, double c) {
  require_defined(a);
  auto pa = a.node();
  Matrix v = a.value().array() + c;
  return make_result(std::move(v), {pa}, [pa](Node& self) { accumulate(*pa, self.grad); });
}

Tensor matmul_transposed(const Tensor& x, const Tensor& w) {
  require_defined(x);
  require_defined(w);
  if (x.cols() != w.cols()) {
    throw ShapeError("matmul: input " + shape_str(x.value()) + " does not fit weight " +
                     shape_str(w.value()));
  }
  auto px = x.node(), pw = w.node();
  Matrix out = x.value() * w.value().transpose();
  return make_result(std::move(out), {px, pw}, [px, pw](Node& self) {
    if (px->requires_grad) accumulate(*px, self.grad * pw->value);
    if (pw->requires_grad) accumulate(*pw, self.grad.transpose() * px->value);
  });
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias) {
  require_defined(x);
  require_defined(bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("bias " + shape_str(bias.value()) + " does not fit " + shape_str(x.value()));
  }
  auto px = x.node(), pb = bias.node();
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return make_result(std::move(out), {px, pb}, [px, pb](Node& self) {
    accumulate(*px, self.grad);
    if (pb->requires_grad) accumulate(*pb, self.grad.colwise().sum());
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x);
  auto px = x.node();
  Matrix out = x.value().cwiseMax(0.0);
  return make_result(std::move(out), {px}, [px](Node& self) {
    Matrix g = (px->value.array() > 0.0).select(self.grad, 0.0);
    accumulate(*px, g);
  });
}

Tensor abs(const Tensor& x) {
  require_defined(x);
  auto px = x.node();
  return make_result(x.value().cwiseAbs(), {px}, [px](Node& self) {
    Matrix g = self.grad.array() * px->value.array().sign();
    accumulate(*px, g);
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x);
  auto px = x.node();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {px}, [px](Node& self) {
    accumulate(*px, Matrix::Constant(px->value.rows(), px->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x);
  if (x.size() == 0) throw ContractError("mean of an empty tensor");
  return sum(x) * (1.0 / static_cast<double>(x.size()));
}

Tensor row_mean(const Tensor& x) {
  require_defined(x);
  if (x.cols() == 0) throw ContractError("row_mean over zero columns");
  auto px = x.node();
  const double inv = 1.0 / static_cast<double>(x.cols());
  Matrix out = x.value().rowwise().sum() * inv;
  return make_result(std::move(out), {px}, [px, inv](Node& self) {
    Matrix g = (self.grad.col(0) * inv).replicate(1, px->value.cols());
    accumulate(*px, g);
  });
}

Tensor weighted_sum(const Tensor& x, const Matrix& weights) {
  require_defined(x);
  if (weights.rows() != x.rows() || weights.cols() != x.cols()) {
    throw ShapeError("weighted_sum: weights " + shape_str(weights) + " vs " + shape_str(x.value()));
  }
  auto px = x.node();
  Matrix out(1, 1);
  out(0, 0) = x.value().cwiseProduct(weights).sum();
  return make_result(std::move(out), {px}, [px, weights](Node& self) {
    accumulate(*px, weights * self.grad(0, 0));
  });
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
  require_defined(x);
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                       shape_str(x.value()));
    }
    out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  auto px = x.node();
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {px}, [px, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(px->value.rows(), px->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    accumulate(*px, g);
  });
}

Tensor row_l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "row_l1_distance");
  return row_mean(abs(a - b));
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_defined(x);
  Eigen::VectorXd norms = x.value().rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
  }
  Matrix out = norms.cwiseInverse().asDiagonal() * x.value();
  auto px = x.node();
  return make_result(out, {px}, [px, norms, out](Node& self) {
    // d(x/|x|) = (I - y y^T) / |x|, applied row by row.
    Eigen::VectorXd dots = self.grad.cwiseProduct(out).rowwise().sum();
    Matrix g = self.grad - dots.asDiagonal() * out;
    g = norms.cwiseInverse().asDiagonal() * g;
    accumulate(*px, g);
  });
}

Tensor straight_through(const Tensor& x, Matrix forward_value, Matrix mask) {
  require_defined(x);
  if (forward_value.rows() != x.rows() || forward_value.cols() != x.cols() ||
      mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("straight_through: value/mask shape mismatch with " + shape_str(x.value()));
  }
  auto px = x.node();
  return make_result(std::move(forward_value), {px}, [px, mask = std::move(mask)](Node& self) {
    accumulate(*px, self.grad.cwiseProduct(mask));
  });
}

}  // namespace edgedistill
