#include "edgedistill/encoder.hpp"
#include "edgedistill/errors.hpp"
#include "edgedistill/tensor.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <vector>

using namespace edgedistill;
using namespace edgedistill::testing;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

// Values bounded away from the kinks of relu and abs.
Matrix away_from_zero(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) {
    const double mag = rng.uniform(0.1, 1.0);
    m.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return m;
}

// Checks d/dx sum(R .* op(x)) against finite differences.
void check_unary(const std::function<Tensor(const Tensor&)>& op, Rng& rng, Index r, Index c,
                 bool kinked = false) {
  for (int t = 0; t < kInstances; ++t) {
    const Matrix x0 = kinked ? away_from_zero(rng, r, c) : random_matrix(rng, r, c);
    const Tensor probe = op(Tensor(x0));
    const Matrix weights = random_matrix(rng, probe.rows(), probe.cols());
    Tensor x(x0, true);
    backward(weighted_sum(op(x), weights));
    const Matrix num = numeric_grad(
        [&](const Matrix& m) { return weighted_sum(op(Tensor(m)), weights).item(); }, x0);
    CHECK(grad_error(x.grad(), num) < kTol);
  }
}

void check_binary(const std::function<Tensor(const Tensor&, const Tensor&)>& op, Rng& rng,
                  std::array<Index, 2> sa, std::array<Index, 2> sb, bool kinked = false) {
  for (int t = 0; t < kInstances; ++t) {
    const Matrix a0 = kinked ? away_from_zero(rng, sa[0], sa[1]) : random_matrix(rng, sa[0], sa[1]);
    const Matrix b0 = kinked ? 0.01 * random_matrix(rng, sb[0], sb[1]) : random_matrix(rng, sb[0], sb[1]);
    const Tensor probe = op(Tensor(a0), Tensor(b0));
    const Matrix weights = random_matrix(rng, probe.rows(), probe.cols());
    Tensor a(a0, true), b(b0, true);
    backward(weighted_sum(op(a, b), weights));
    const Matrix na = numeric_grad(
        [&](const Matrix& m) { return weighted_sum(op(Tensor(m), Tensor(b0)), weights).item(); }, a0);
    const Matrix nb = numeric_grad(
        [&](const Matrix& m) { return weighted_sum(op(Tensor(a0), Tensor(m)), weights).item(); }, b0);
    CHECK(grad_error(a.grad(), na) < kTol);
    CHECK(grad_error(b.grad(), nb) < kTol);
  }
}

DenseEncoder two_layer(Rng& rng, Index in, Index hidden, Index out) {
  const std::vector<Index> dims{in, hidden, out};
  DenseEncoder enc = DenseEncoder::random(dims, rng);
  for (auto& l : enc.layers()) l.bias.mutable_value() = random_matrix(rng, 1, l.bias.cols(), -0.5, 0.5);
  return enc;
}

}  // namespace

TEST_CASE("forward: identity and relu layers") {
  DenseLayer id{Tensor(Matrix::Identity(2, 2)), Tensor(Matrix::Zero(1, 2)), Activation::kIdentity};
  DenseEncoder enc({id});
  Matrix x(1, 2);
  x << 1, 2;
  CHECK(forward(enc, x) == x);

  Matrix w(1, 1);
  w << -1;
  DenseLayer r{Tensor(w), Tensor(Matrix::Zero(1, 1)), Activation::kRelu};
  DenseLayer out{Tensor(Matrix::Identity(1, 1)), Tensor(Matrix::Zero(1, 1)), Activation::kIdentity};
  DenseEncoder relu_net({r, out});
  Matrix two(1, 1);
  two << 2;
  CHECK(forward(relu_net, two)(0, 0) == 0.0);
}

TEST_CASE("forward: two-layer net matches a scalar re-implementation") {
  Rng rng(11);
  const DenseEncoder enc = two_layer(rng, 5, 7, 3);
  const Matrix x = random_matrix(rng, 4, 5);
  const Matrix got = forward(enc, x);
  const Matrix& w1 = enc.layers()[0].weight.value();
  const Matrix& b1 = enc.layers()[0].bias.value();
  const Matrix& w2 = enc.layers()[1].weight.value();
  const Matrix& b2 = enc.layers()[1].bias.value();
  for (Index n = 0; n < 4; ++n) {
    std::vector<double> h(7);
    for (Index j = 0; j < 7; ++j) {
      double acc = b1(0, j);
      for (Index i = 0; i < 5; ++i) acc += w1(j, i) * x(n, i);
      h[static_cast<std::size_t>(j)] = acc > 0 ? acc : 0;
    }
    for (Index k = 0; k < 3; ++k) {
      double acc = b2(0, k);
      for (Index j = 0; j < 7; ++j) acc += w2(k, j) * h[static_cast<std::size_t>(j)];
      CHECK(got(n, k) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  // The graph path agrees with the pure path.
  CHECK((forward(enc, Tensor(x)).value() - got).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("forward: shape mismatch names both shapes") {
  Rng rng(3);
  const DenseEncoder enc = two_layer(rng, 5, 4, 2);
  try {
    forward(enc, Matrix::Zero(2, 6).eval());
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('6') != std::string::npos);
    CHECK(msg.find('5') != std::string::npos);
  }
}

TEST_CASE("backward: linear and dead-relu gradients") {
  Matrix w0(1, 2);
  w0 << 0.3, -0.7;
  Tensor w(w0, true);
  Tensor x(Matrix::Ones(1, 2));
  backward(sum(matmul_transposed(x, w)));
  CHECK(w.grad() == Matrix::Ones(1, 2));

  Tensor wn(Matrix::Constant(1, 1, -0.5), true);
  Tensor xp(Matrix::Constant(1, 1, 2.0));
  backward(sum(relu(matmul_transposed(xp, wn))));
  CHECK(wn.grad()(0, 0) == 0.0);
}

TEST_CASE("backward: graph hygiene") {
  Tensor frozen(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(backward(sum(frozen)), ContractError);
  Tensor p(Matrix::Ones(2, 2), true);
  CHECK_THROWS_AS(backward(p + p), ContractError);  // not a scalar
  CHECK_THROWS_AS(backward(Tensor(Matrix::Ones(2, 2)), Matrix::Ones(2, 2)), ContractError);
}

TEST_CASE("backward: leaf gradients accumulate, a shared input sums its paths") {
  Tensor x(Matrix::Constant(1, 1, 3.0), true);
  backward(sum(x + x));
  CHECK(x.grad()(0, 0) == 2.0);
  backward(sum(x * 4.0));
  CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("finite differences: elementwise and reduction ops") {
  Rng rng(2024);
  check_binary([](const Tensor& a, const Tensor& b) { return a + b; }, rng, {3, 4}, {3, 4});
  check_binary([](const Tensor& a, const Tensor& b) { return a - b; }, rng, {3, 4}, {3, 4});
  check_unary([](const Tensor& a) { return a * -2.5; }, rng, 3, 4);
  check_unary([](const Tensor& a) { return add_scalar(a, 0.7); }, rng, 3, 4);
  check_unary([](const Tensor& a) { return relu(a); }, rng, 3, 4, true);
  check_unary([](const Tensor& a) { return abs(a); }, rng, 3, 4, true);
  check_unary([](const Tensor& a) { return sum(a); }, rng, 3, 4);
  check_unary([](const Tensor& a) { return mean(a); }, rng, 3, 4);
  check_unary([](const Tensor& a) { return row_mean(a); }, rng, 3, 4);
}

TEST_CASE("finite differences: linear algebra and indexing ops") {
  Rng rng(77);
  check_binary([](const Tensor& x, const Tensor& w) { return matmul_transposed(x, w); }, rng, {4, 5}, {3, 5});
  check_binary([](const Tensor& x, const Tensor& b) { return add_row_broadcast(x, b); }, rng, {4, 3}, {1, 3});
  const std::vector<Index> rows{2, 0, 2, 1};
  check_unary([&](const Tensor& x) { return gather_rows(x, rows); }, rng, 3, 4);
  check_binary([](const Tensor& a, const Tensor& b) { return row_l1_distance(a, b); }, rng, {4, 6}, {4, 6},
               true);
  check_unary([](const Tensor& x) { return l2_normalize_rows(x); }, rng, 4, 5, true);
}

TEST_CASE("finite differences: weighted_sum") {
  Rng rng(5);
  const Matrix w = random_matrix(rng, 3, 4);
  check_unary([&](const Tensor& x) { return weighted_sum(x, w) * 1.0; }, rng, 3, 4);
}

TEST_CASE("finite differences: full two-layer encoder, every parameter") {
  Rng rng(99);
  for (int t = 0; t < kInstances; ++t) {
    DenseEncoder enc = two_layer(rng, 4, 6, 3);
    const Matrix x = random_matrix(rng, 5, 4);
    const Matrix target = random_matrix(rng, 5, 3);
    auto loss = [&](const DenseEncoder& e) {
      const Tensor y = forward(e, Tensor(x));
      return mean(abs(y - Tensor(target))) + weighted_sum(y, target) * 0.5;
    };
    auto loss_of = [&](const DenseEncoder& e) { return loss(e).item(); };
    backward(loss(enc));
    for (std::size_t li = 0; li < enc.num_layers(); ++li) {
      for (int which = 0; which < 2; ++which) {
        Tensor& p = which == 0 ? enc.layers()[li].weight : enc.layers()[li].bias;
        const Matrix num = numeric_grad(
            [&](const Matrix& m) {
              DenseEncoder c = enc;
              (which == 0 ? c.layers()[li].weight : c.layers()[li].bias).mutable_value() = m;
              return loss_of(c);
            },
            p.value());
        CHECK(grad_error(p.grad(), num) < kTol);
      }
    }
  }
}

TEST_CASE("l2_normalize_rows examples") {
  Matrix x(1, 2);
  x << 3, 4;
  const Matrix y = l2_normalize_rows(Tensor(x)).value();
  CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Matrix unit(1, 3);
  unit << 1, 0, 0;
  CHECK(l2_normalize_rows(Tensor(unit)).value() == unit);

  Rng rng(8);
  const Matrix r = l2_normalize_rows(Tensor(random_matrix(rng, 50, 9))).value();
  for (Index i = 0; i < r.rows(); ++i) CHECK(std::abs(r.row(i).norm() - 1.0) < 1e-9);

  CHECK_THROWS_AS(l2_normalize_rows(Tensor(Matrix::Zero(2, 3))), DegenerateInputError);
}

TEST_CASE("non-finite values are rejected") {
  Tensor x(Matrix::Constant(1, 1, 1e308), true);
  CHECK_THROWS_AS(x * 1e10, DivergenceError);
}

TEST_CASE("encoder copies are deep") {
  Rng rng(4);
  DenseEncoder a = two_layer(rng, 3, 3, 2);
  DenseEncoder b = a;
  b.layers()[0].weight.mutable_value()(0, 0) += 1.0;
  CHECK(a.layers()[0].weight.value()(0, 0) != b.layers()[0].weight.value()(0, 0));
}
