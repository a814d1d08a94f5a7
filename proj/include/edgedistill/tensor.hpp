#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace edgedistill {

using Index = Eigen::Index;
/// Row-major so that the flat buffer matches the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using ConstRowRef = Eigen::Ref<const RowVector>;

namespace detail {
struct Node;
}

/// Handle to a node of the reverse-mode graph. Copies share the node; use
/// clone() for an independent leaf with the same value.
///
/// Shapes are two-dimensional (rows x cols); a scalar is 1x1. A result
/// tracks its parents only when at least one of them requires a gradient,
/// so evaluating frozen parameters builds no graph.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  Index rows() const;
  Index cols() const;
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  Index size() const { return rows() * cols(); }

  const Matrix& value() const;
  /// Direct write access for optimizers; does not invalidate the graph.
  Matrix& mutable_value();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  const Matrix& grad() const;
  void set_grad(Matrix grad);
  void zero_grad();
  /// Drops the gradient buffer entirely (has_grad() becomes false).
  void clear_grad();

  Tensor detach() const;
  Tensor clone() const;

  bool defined() const { return node_ != nullptr; }

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
};
}  // namespace detail

/// Propagates d(loss)/d(.) into every reachable tensor that requires a
/// gradient. Leaf gradients accumulate across calls; interior gradients are
/// recomputed on each call.
void backward(const Tensor& loss);
/// Vector-Jacobian product seeded with `upstream` (same shape as `output`).
void backward(const Tensor& output, const Matrix& upstream);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);

/// x * w^T, with x [B x in] and w [out x in].
Tensor matmul_transposed(const Tensor& x, const Tensor& w);
/// x + bias broadcast over rows; bias is [1 x cols].
Tensor add_row_broadcast(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over columns, one value per row: [B x 1].
Tensor row_mean(const Tensor& x);
/// Sum of x elementwise-weighted by a constant matrix of the same shape.
Tensor weighted_sum(const Tensor& x, const Matrix& weights);
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);
/// Mean absolute difference per row pair: [B x 1].
Tensor row_l1_distance(const Tensor& a, const Tensor& b);
/// Each row scaled to unit Euclidean norm. Throws DegenerateInputError on a
/// zero row.
Tensor l2_normalize_rows(const Tensor& x);
/// Emits `forward_value` while routing upstream gradients through `mask`
/// (elementwise); the building block of straight-through estimators.
Tensor straight_through(const Tensor& x, Matrix forward_value, Matrix mask);

}  // namespace edgedistill
