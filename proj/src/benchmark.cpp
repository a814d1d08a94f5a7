#include "edgedistill/benchmark.hpp"

#include "edgedistill/errors.hpp"
#include "edgedistill/random.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace edgedistill {

void BenchmarkConfig::validate() const {
  if (classes < 2) throw ConfigError("benchmark needs at least two classes");
  if (distractors < 0) throw ConfigError("distractor count must be non-negative");
  if (latent_dim < 8) throw ConfigError("latent dimension must be at least 8");
  if (input_dim < 1 || map_hidden < 1) throw ConfigError("input and map widths must be positive");
  if (n_per_class < 2) throw ConfigError("need at least two samples per class");
  if (!(noise >= 0.0)) throw ConfigError("noise level must be non-negative");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  if (!(corruption >= 0.0 && corruption <= 1.0)) throw ConfigError("corruption must lie in [0, 1]");
  if (corruption_blend < 1) throw ConfigError("corruption blend must be at least 1");
  if (!(distractor_angle_deg >= 0.0 && distractor_angle_deg < 90.0)) {
    throw ConfigError("distractor angle must lie in [0, 90)");
  }
}

Matrix ModalityMap::apply(const Matrix& latent) const {
  Matrix h = latent * w1.transpose();
  h.rowwise() += b1.row(0);
  h = h.array().tanh();
  Matrix x = h * w2.transpose();
  x.rowwise() += b2.row(0);
  return x.array().tanh();
}

namespace {

constexpr int kMaxRetries = 1000;

RowVector random_unit(Rng& rng, int dim) {
  RowVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

bool separated(const RowVector& v, const Matrix& others, Index count) {
  const double max_cos = std::cos(kMinPrototypeAngleDeg * std::numbers::pi / 180.0);
  for (Index j = 0; j < count; ++j) {
    if (v.dot(others.row(j)) > max_cos) return false;
  }
  return true;
}

ModalityMap random_map(Rng& rng, int latent, int hidden, int out) {
  ModalityMap m;
  m.w1.resize(hidden, latent);
  m.b1.resize(1, hidden);
  m.w2.resize(out, hidden);
  m.b2.resize(1, out);
  for (Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = rng.normal();
  for (Index i = 0; i < m.b1.size(); ++i) m.b1.data()[i] = 0.1 * rng.normal();
  const double g = 1.5 / std::sqrt(static_cast<double>(hidden));
  for (Index i = 0; i < m.w2.size(); ++i) m.w2.data()[i] = g * rng.normal();
  for (Index i = 0; i < m.b2.size(); ++i) m.b2.data()[i] = 0.1 * rng.normal();
  return m;
}

Matrix to_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

std::vector<std::string> numbered(const char* prefix, int count) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%02d", prefix, i);
    out.emplace_back(buf);
  }
  return out;
}

}  // namespace

SyntheticBenchmark generate_benchmark(const BenchmarkConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int K = config.classes, Kd = config.distractors, D = config.latent_dim;

  SyntheticBenchmark b;
  b.config = config;
  Matrix all(K + Kd, D);
  for (int k = 0; k < K; ++k) {
    int tries = 0;
    RowVector v = random_unit(rng, D);
    while (!separated(v, all, k)) {
      if (++tries >= kMaxRetries) {
        throw DataError("prototype separation of 30 degrees unreachable for K = " + std::to_string(K) +
                        " in D = " + std::to_string(D));
      }
      v = random_unit(rng, D);
    }
    all.row(k) = v;
  }
  for (int j = 0; j < Kd; ++j) {
    const Index row = K + j;
    if (config.distractor_angle_deg > 0.0) {
      // Rotate a true prototype towards a random orthogonal direction.
      const RowVector base = all.row(j % K);
      RowVector r = random_unit(rng, D);
      r -= r.dot(base) * base;
      r /= r.norm();
      const double t = config.distractor_angle_deg * std::numbers::pi / 180.0;
      all.row(row) = std::cos(t) * base + std::sin(t) * r;
      all.row(row) /= all.row(row).norm();
    } else {
      int tries = 0;
      RowVector v = random_unit(rng, D);
      while (!separated(v, all, row)) {
        if (++tries >= kMaxRetries) throw DataError("distractor separation unreachable");
        v = random_unit(rng, D);
      }
      all.row(row) = v;
    }
  }
  // Features are stored as float32 on disk; re-normalize after rounding so
  // the unit-norm invariant holds on the stored values.
  for (Index r = 0; r < all.rows(); ++r) {
    all.row(r) = to_float(all.row(r) / all.row(r).norm());
  }
  b.prototypes = all.topRows(K);
  b.classes = {numbered("class", K), b.prototypes};
  auto labels = numbered("class", K);
  for (auto& d : numbered("distractor", Kd)) labels.push_back(d);
  b.superset = {labels, all};

  b.map_rgb = random_map(rng, D, config.map_hidden, config.input_dim);
  b.map_nonrgb = random_map(rng, D, config.map_hidden, config.input_dim);

  const int n = K * config.n_per_class;
  std::vector<std::int32_t> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i / config.n_per_class;
  rng.shuffle(y);

  Matrix latent_rgb(n, D), latent_nonrgb(n, D);
  for (int i = 0; i < n; ++i) {
    const RowVector proto = b.prototypes.row(y[static_cast<std::size_t>(i)]);
    for (int d = 0; d < D; ++d) {
      latent_rgb(i, d) = proto(d) + config.noise * rng.normal();
      latent_nonrgb(i, d) = proto(d) + config.noise * rng.normal();
    }
  }
  const Matrix x_rgb = to_float(b.map_rgb.apply(latent_rgb));
  const Matrix x_nonrgb = to_float(b.map_nonrgb.apply(latent_nonrgb));

  const int n_test = std::max(1, static_cast<int>(std::lround(config.test_fraction * n)));
  const int n_train = n - n_test;
  if (n_train < 1) throw ConfigError("test fraction leaves no training samples");

  b.test.rgb = x_rgb.topRows(n_test);
  b.test.nonrgb = x_nonrgb.topRows(n_test);
  b.test.labels.assign(y.begin(), y.begin() + n_test);
  b.train.rgb = x_rgb.bottomRows(n_train);
  b.train.nonrgb = x_nonrgb.bottomRows(n_train);
  b.train.labels.assign(y.begin() + n_test, y.end());

  b.train_teacher = latent_rgb.bottomRows(n_train);
  b.train_corrupted.assign(static_cast<std::size_t>(n_train), false);
  const int total = K + Kd;
  for (int i = 0; i < n_train; ++i) {
    if (config.corruption <= 0.0 || rng.uniform() >= config.corruption) continue;
    const int truth = b.train.labels[static_cast<std::size_t>(i)];
    std::vector<int> wrong;
    for (int k = 0; k < total; ++k) {
      if (k != truth) wrong.push_back(k);
    }
    rng.shuffle(wrong);
    const int blend = std::min<int>(config.corruption_blend, static_cast<int>(wrong.size()));
    RowVector f = RowVector::Zero(D);
    for (int t = 0; t < blend; ++t) f += all.row(wrong[static_cast<std::size_t>(t)]);
    f *= b.train_teacher.row(i).norm() / f.norm();
    b.train_teacher.row(i) = f;
    b.train_corrupted[static_cast<std::size_t>(i)] = true;
  }
  b.train_teacher = to_float(b.train_teacher);
  return b;
}

void write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_labels(dir / "classes.txt", bench.classes.names);
  write_embeddings(dir / "classes.eve", {bench.classes.text_features, bench.classes.names});
  write_labels(dir / "superset.txt", bench.superset.labels);
  write_embeddings(dir / "superset.eve", {bench.superset.text_features, bench.superset.labels});
  write_dataset(dir / "train.evd", bench.train);
  write_dataset(dir / "test.evd", bench.test);
  write_embeddings(dir / "teacher_train.eve", {bench.train_teacher, {}});
}

SyntheticBenchmark read_benchmark(const std::filesystem::path& dir) {
  SyntheticBenchmark b;
  b.classes.names = read_labels(dir / "classes.txt");
  b.classes.text_features = read_embeddings(dir / "classes.eve").rows;
  b.classes.validate();
  b.prototypes = b.classes.text_features;
  b.superset.labels = read_labels(dir / "superset.txt");
  b.superset.text_features = read_embeddings(dir / "superset.eve").rows;
  b.superset.validate();
  b.train = read_dataset(dir / "train.evd");
  b.test = read_dataset(dir / "test.evd");
  b.train_teacher = read_embeddings(dir / "teacher_train.eve").rows;
  if (static_cast<std::size_t>(b.train_teacher.rows()) != b.train.size()) {
    throw DataError("teacher features do not match the training set size");
  }
  return b;
}

}  // namespace edgedistill
