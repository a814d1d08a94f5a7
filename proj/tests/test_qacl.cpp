#include "edgedistill/benchmark.hpp"
#include "edgedistill/errors.hpp"
#include "edgedistill/io.hpp"
#include "edgedistill/qacl.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace edgedistill;
using namespace edgedistill::testing;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

RowVector scalar_row(double v) { return RowVector::Constant(1, v); }

double l1_ref(const RowVector& a, const RowVector& b) {
  double s = 0;
  for (Index i = 0; i < a.size(); ++i) s += std::abs(a(i) - b(i));
  return s / static_cast<double>(a.size());
}

SampleRef R(std::size_t i) { return {i, Modality::kRgb}; }
SampleRef N(std::size_t i) { return {i, Modality::kNonRgb}; }

struct Expected {
  SampleRef anchor, positive;
  std::vector<SampleRef> negatives;
};

void check_triplets(const std::vector<Triplet>& got, const std::vector<Expected>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t k = 0; k < got.size(); ++k) {
    CHECK(got[k].anchor == want[k].anchor);
    CHECK(got[k].positive == want[k].positive);
    CHECK(got[k].negatives == want[k].negatives);
  }
}

}  // namespace

TEST_CASE("select_positive examples") {
  CHECK(select_positive(scalar_row(0.4), col({9.0})) == 0u);
  CHECK(select_positive(scalar_row(0.4), col({0.1, 0.4, 0.9})) == 1u);
  CHECK_FALSE(select_positive(scalar_row(0.4), Matrix(0, 1)).has_value());
  CHECK(select_positive(scalar_row(0.0), col({0.5, -0.5})) == 0u);  // tie: lowest index
}

TEST_CASE("select_positive matches a linear scan") {
  Rng rng(201);
  for (int t = 0; t < 100; ++t) {
    const RowVector a = random_matrix(rng, 1, 6).row(0);
    const Matrix c = random_matrix(rng, 10, 6);
    std::size_t best = 0;
    for (Index k = 1; k < c.rows(); ++k) {
      if (l1_ref(a, c.row(k)) < l1_ref(a, c.row(static_cast<Index>(best)))) best = static_cast<std::size_t>(k);
    }
    CHECK(*select_positive(a, c) == best);
  }
}

TEST_CASE("filter_semi_hard examples") {
  const RowVector a = scalar_row(0.0), p = scalar_row(0.3);
  CHECK(filter_semi_hard(a, p, col({0.5}), 0.3, 3) == std::vector<std::size_t>{0});
  CHECK(filter_semi_hard(a, p, col({0.2}), 0.3, 3).empty());
  CHECK(filter_semi_hard(a, p, col({0.7}), 0.3, 3).empty());
  CHECK(filter_semi_hard(a, p, col({0.5, 0.4, -0.45, 0.31}), 0.3, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(filter_hard(a, p, col({0.5, 0.1, -0.2, 0.7}), 3) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("filters match a brute-force scan") {
  Rng rng(202);
  for (int t = 0; t < 200; ++t) {
    const RowVector a = random_matrix(rng, 1, 4).row(0), p = random_matrix(rng, 1, 4).row(0);
    const Matrix c = random_matrix(rng, 10, 4);
    const double m = rng.uniform(0.05, 0.6);
    const std::size_t j = 1 + rng.below(4);
    std::vector<std::size_t> sh, hd;
    const double dap = l1_ref(a, p);
    for (Index k = 0; k < c.rows(); ++k) {
      const double dan = l1_ref(a, c.row(k));
      if (dap < dan && dan < dap + m && sh.size() < j) sh.push_back(static_cast<std::size_t>(k));
      if (dan < dap && hd.size() < j) hd.push_back(static_cast<std::size_t>(k));
    }
    CHECK(filter_semi_hard(a, p, c, m, j) == sh);
    CHECK(filter_hard(a, p, c, j) == hd);
  }
}

TEST_CASE("triplet_loss examples") {
  CHECK(triplet_loss(scalar_row(0.0), scalar_row(0.3), col({0.5}), 0.3) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(triplet_loss(scalar_row(0.0), scalar_row(0.25), col({0.75}), 0.5) == 0.0);
  CHECK(triplet_loss(scalar_row(0.0), scalar_row(0.25), Matrix(0, 1), 0.5) == 0.0);
}

TEST_CASE("triplet_loss matches a per-triplet loop; semi-hard terms lie in (0, m)") {
  Rng rng(203);
  int with_negatives = 0;
  for (int t = 0; t < 300; ++t) {
    const RowVector a = random_matrix(rng, 1, 5).row(0), p = random_matrix(rng, 1, 5).row(0);
    const Matrix c = random_matrix(rng, 10, 5);
    const double m = 0.3;
    const Matrix negs = c.topRows(3);
    double ref = 0;
    for (Index j = 0; j < 3; ++j) ref += l1_ref(a, p) - l1_ref(a, negs.row(j)) + m;
    CHECK(std::abs(triplet_loss(a, p, negs, m) - ref / 3) < 1e-12);

    const auto kept = filter_semi_hard(a, p, c, m, 3);
    for (std::size_t k : kept) {
      const double term = triplet_loss(a, p, c.row(static_cast<Index>(k)), m);
      CHECK(term > 0.0);
      CHECK(term < m);
    }
    with_negatives += kept.empty() ? 0 : 1;
  }
  CHECK(with_negatives > 20);
}

TEST_CASE("build_epoch_triplets: two classes of two samples, enumerated by hand") {
  // One-dimensional embeddings; L1 distance is the absolute difference.
  const Matrix rgb = col({0.0, 0.2, 0.4, 0.9});
  const Matrix nonrgb = col({0.1, 0.15, 0.72, 0.27});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const EmbeddingViews views{rgb, nonrgb};
  Stage2Config cfg;
  Rng rng(0);

  check_triplets(build_epoch_triplets(labels, views, cfg, rng),
                 {{R(0), N(1), {R(2), N(3)}},
                  {N(0), R(1), {R(2), N(3)}},
                  {R(1), N(0), {R(2)}},
                  {N(1), R(0), {R(2)}},
                  {R(2), N(3), {R(0), N(0), R(1)}},
                  {N(3), R(2), {R(0), N(0)}}});

  cfg.sampling = Sampling::kHard;
  check_triplets(build_epoch_triplets(labels, views, cfg, rng),
                 {{R(1), N(0), {N(3)}}, {N(1), R(0), {N(3)}}, {N(3), R(2), {R(1), N(1)}}});
}

TEST_CASE("build_epoch_triplets: degenerate label sets") {
  Rng rng(1);
  const Matrix e = random_matrix(rng, 6, 3);
  const EmbeddingViews views{e, e};
  Stage2Config cfg;
  CHECK(build_epoch_triplets({2, 2, 2, 2, 2, 2}, views, cfg, rng).empty());
  // Singleton classes have no positive.
  CHECK(build_epoch_triplets({0, 1, 2, 3, 4, 5}, views, cfg, rng).empty());
  CHECK_THROWS_AS(build_epoch_triplets({0, 1}, views, cfg, rng), ContractError);
}

TEST_CASE("build_epoch_triplets: sampled pools, certification and determinism") {
  Rng data(204);
  const Index n = 60;
  const Matrix rgb = random_matrix(data, n, 8), nonrgb = rgb + 0.3 * random_matrix(data, n, 8);
  std::vector<std::size_t> labels;
  for (Index i = 0; i < n; ++i) labels.push_back(data.below(5));
  const EmbeddingViews views{rgb, nonrgb};
  Stage2Config cfg;
  cfg.margin = 0.5;

  Rng r1(9), r2(9);
  const auto a = build_epoch_triplets(labels, views, cfg, r1);
  const auto b = build_epoch_triplets(labels, views, cfg, r2);
  REQUIRE(!a.empty());
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].anchor == b[k].anchor);
    CHECK(a[k].negatives == b[k].negatives);
  }
  for (const auto& t : a) {
    CHECK(t.positive.modality != t.anchor.modality);
    CHECK(t.positive.sample != t.anchor.sample);
    CHECK(labels[t.positive.sample] == labels[t.anchor.sample]);
    CHECK(t.negatives.size() <= cfg.neg_set_size);
    std::set<std::pair<std::size_t, int>> seen;
    const double dap = l1_ref(views.row(t.anchor), views.row(t.positive));
    for (const auto& neg : t.negatives) {
      CHECK(labels[neg.sample] != labels[t.anchor.sample]);
      CHECK(seen.insert({neg.sample, static_cast<int>(neg.modality)}).second);
      const double dan = l1_ref(views.row(t.anchor), views.row(neg));
      CHECK(dap < dan);
      CHECK(dan < dap + cfg.margin);
    }
  }
}

TEST_CASE("stage2_train: zero epochs reproduces PTQ of the input student") {
  BenchmarkConfig bc;
  bc.seed = 3;
  bc.n_per_class = 20;
  const auto bench = generate_benchmark(bc);
  Rng rng(5);
  const std::vector<Index> dims{bc.input_dim, 32, bc.latent_dim};
  DenseEncoder student = DenseEncoder::random(dims, rng);
  round_to_float(student);
  std::vector<std::size_t> labels(bench.train.labels.begin(), bench.train.labels.end());
  const QuantScheme scheme{4, QuantMode::kStatic};
  const auto calib = calibrate_static(student, bench.train.rgb, bench.train.nonrgb, scheme);

  Stage2Config cfg;
  cfg.epochs = 0;
  const auto r = stage2_train(student, bench.train.rgb, bench.train.nonrgb, labels, scheme, calib, cfg);
  CHECK(r.trace.empty());
  CHECK(encode_quantized_checkpoint(ptq(r.student, calib, scheme)) ==
        encode_quantized_checkpoint(ptq(student, calib, scheme)));
}

TEST_CASE("stage2_train: observer sees certified triplets, traces are deterministic") {
  BenchmarkConfig bc;
  bc.seed = 4;
  bc.n_per_class = 20;
  const auto bench = generate_benchmark(bc);
  Rng rng(6);
  const std::vector<Index> dims{bc.input_dim, 32, bc.latent_dim};
  const DenseEncoder student = DenseEncoder::random(dims, rng);
  std::vector<std::size_t> labels(bench.train.labels.begin(), bench.train.labels.end());
  for (QuantMode mode : {QuantMode::kStatic, QuantMode::kDynamic}) {
    const QuantScheme scheme{4, mode};
    const auto calib = mode == QuantMode::kStatic
                           ? calibrate_static(student, bench.train.rgb, bench.train.nonrgb, scheme)
                           : weight_params(student, scheme);
    Stage2Config cfg;
    cfg.epochs = 3;
    cfg.schedule = LrSchedule::constant(1e-4);
    cfg.seed = 11;
    std::size_t seen = 0, violations = 0;
    auto observer = [&](int, const EmbeddingViews& v, const std::vector<Triplet>& ts) {
      for (const auto& t : ts) {
        const double dap = l1_ref(v.row(t.anchor), v.row(t.positive));
        for (const auto& neg : t.negatives) {
          const double dan = l1_ref(v.row(t.anchor), v.row(neg));
          ++seen;
          if (!(dap < dan && dan < dap + cfg.margin)) ++violations;
        }
      }
    };
    const auto a = stage2_train(student, bench.train.rgb, bench.train.nonrgb, labels, scheme, calib, cfg, observer);
    const auto b = stage2_train(student, bench.train.rgb, bench.train.nonrgb, labels, scheme, calib, cfg);
    CHECK(seen > 0);
    CHECK(violations == 0);
    REQUIRE(a.trace.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a.trace[e].loss == b.trace[e].loss);
      CHECK(a.trace[e].triplets == b.trace[e].triplets);
      CHECK(a.trace[e].loss > 0.0);
      CHECK(a.trace[e].loss < cfg.margin);
    }
    CHECK(a.student.layers()[0].weight.value() == b.student.layers()[0].weight.value());
    CHECK(a.student.layers()[0].weight.value() != student.layers()[0].weight.value());
  }
}
