#include "edgedistill/benchmark.hpp"
#include "edgedistill/distill.hpp"
#include "edgedistill/errors.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace edgedistill;
using namespace edgedistill::testing;

namespace {

double loss_ref(const Matrix& sr, const Matrix& sn, const Matrix& t) {
  double total = 0;
  for (Index i = 0; i < t.rows(); ++i) {
    double a = 0, b = 0;
    for (Index j = 0; j < t.cols(); ++j) {
      a += std::abs(t(i, j) - sn(i, j));
      b += std::abs(t(i, j) - sr(i, j));
    }
    total += a / static_cast<double>(t.cols()) + b / static_cast<double>(t.cols());
  }
  return total / static_cast<double>(t.rows());
}

}  // namespace

TEST_CASE("stage1_loss examples") {
  Rng rng(1);
  const Matrix t = random_matrix(rng, 4, 6);
  CHECK(stage1_loss(Tensor(t), Tensor(t), Tensor(t)).item() == 0.0);
  const double c = -0.35;
  const Matrix s = Matrix::Constant(3, 5, c);
  CHECK(stage1_loss(Tensor(s), Tensor(s), Tensor(Matrix::Zero(3, 5))).item() ==
        doctest::Approx(2 * std::abs(c)).epsilon(1e-15));
}

TEST_CASE("stage1_loss matches a double loop and is symmetric in the modalities") {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const Matrix sr = random_matrix(rng, 5, 7), sn = random_matrix(rng, 5, 7), t = random_matrix(rng, 5, 7);
    const double got = stage1_loss(Tensor(sr), Tensor(sn), Tensor(t)).item();
    CHECK(std::abs(got - loss_ref(sr, sn, t)) < 1e-12);
    CHECK(stage1_loss(Tensor(sn), Tensor(sr), Tensor(t)).item() == doctest::Approx(got).epsilon(1e-15));
  }
}

TEST_CASE("stage1_loss gradients match finite differences") {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const Matrix sr = random_matrix(rng, 4, 5), sn = random_matrix(rng, 4, 5);
    const Matrix t = sr + 0.2 * random_matrix(rng, 4, 5).cwiseSign() +
                     0.01 * random_matrix(rng, 4, 5);  // keeps |s - t| away from 0
    Tensor a(sr, true), b(sn, true);
    backward(stage1_loss(a, b, Tensor(t)));
    const Matrix na =
        numeric_grad([&](const Matrix& m) { return stage1_loss(Tensor(m), Tensor(sn), Tensor(t)).item(); }, sr);
    CHECK(grad_error(a.grad(), na) < 1e-4);
  }
}

TEST_CASE("stage1_loss rejects a teacher that carries gradients and mismatched shapes") {
  Tensor t(Matrix::Zero(2, 2), true);
  CHECK_THROWS_AS(stage1_loss(Tensor(Matrix::Zero(2, 2)), Tensor(Matrix::Zero(2, 2)), t), ContractError);
  CHECK_THROWS_AS(stage1_loss(Tensor(Matrix::Zero(2, 3)), Tensor(Matrix::Zero(2, 2)), Tensor(Matrix::Zero(2, 2))),
                  ContractError);
}

TEST_CASE("stage1_train: a linear student fits an identity teacher") {
  Rng rng(4);
  const Matrix x = random_matrix(rng, 128, 6);
  const std::vector<Index> dims{6, 6};
  DenseEncoder student = DenseEncoder::random(dims, rng);
  Stage1Config cfg;
  cfg.epochs = 200;
  cfg.base_lr = 1e-2;
  cfg.min_lr = 1e-4;
  cfg.weight_decay = 0.0;
  const auto r = stage1_train(student, x, x, x, cfg);
  CHECK(r.loss_trace.size() == 200);
  CHECK(mean_l1_distance(forward(r.student, x), x) < 5e-3);
  CHECK(r.loss_trace.back() < 0.02 * r.loss_trace.front());
}

TEST_CASE("stage1_train on the synthetic benchmark more than halves both modality distances") {
  BenchmarkConfig bc;
  bc.seed = 5;
  bc.n_per_class = 100;
  const auto bench = generate_benchmark(bc);
  Rng rng(6);
  const std::vector<Index> dims{bc.input_dim, 128, bc.latent_dim};
  const DenseEncoder init = DenseEncoder::random(dims, rng);
  Stage1Config cfg;
  cfg.epochs = 40;
  cfg.seed = 7;
  const auto r = stage1_train(init, bench.train.rgb, bench.train.nonrgb, bench.train_teacher, cfg);
  for (const Matrix* x : {&bench.train.rgb, &bench.train.nonrgb}) {
    const double before = mean_l1_distance(forward(init, *x), bench.train_teacher);
    const double after = mean_l1_distance(forward(r.student, *x), bench.train_teacher);
    CHECK(after <= 0.5 * before);
  }
  CHECK(r.loss_trace.back() <= 0.5 * r.loss_trace.front());
  CHECK_FALSE(r.student.layers()[0].weight.requires_grad());

  // Same seed, same trajectory.
  const auto again = stage1_train(init, bench.train.rgb, bench.train.nonrgb, bench.train_teacher, cfg);
  CHECK(again.loss_trace == r.loss_trace);
  CHECK(again.student.layers()[0].weight.value() == r.student.layers()[0].weight.value());
}

TEST_CASE("stage1_train: a runaway learning rate is reported as divergence") {
  Rng rng(8);
  const Matrix x = random_matrix(rng, 16, 3);
  const std::vector<Index> dims{3, 4, 3};
  Stage1Config cfg;
  cfg.epochs = 5;
  cfg.base_lr = cfg.min_lr = 1e300;
  CHECK_THROWS_AS(stage1_train(DenseEncoder::random(dims, rng), x, x, x * 1e10, cfg), DivergenceError);
  CHECK_THROWS_AS(stage1_train(DenseEncoder::random(dims, rng), Matrix(0, 3), Matrix(0, 3), Matrix(0, 3), {}),
                  DataError);
}
