#pragma once

#include "edgedistill/curation.hpp"
#include "edgedistill/eval.hpp"
#include "edgedistill/io.hpp"
#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <filesystem>

namespace edgedistill {

struct BenchmarkConfig {
  std::uint64_t seed = 0;
  int classes = 8;           // K
  int distractors = 8;       // K'
  int latent_dim = 64;       // D
  int input_dim = 384;
  int map_hidden = 128;      // width of the modality maps
  int n_per_class = 200;
  double noise = 0.1;        // per-coordinate std of the latent noise
  double test_fraction = 0.25;
  /// Fraction of training samples whose teacher feature is replaced by an
  /// uninformative blend of `corruption_blend` wrong superset prototypes.
  double corruption = 0.0;
  int corruption_blend = 4;
  /// 0 places distractors at random (>= 30 deg from everything); a positive
  /// value places each one at exactly this angle from a true prototype.
  double distractor_angle_deg = 0.0;

  void validate() const;
};

/// Frozen two-layer squashing map from the latent space to input space:
/// tanh(W2 tanh(W1 z + b1) + b2).
struct ModalityMap {
  Matrix w1, b1, w2, b2;

  Matrix apply(const Matrix& latent) const;
};

struct SyntheticBenchmark {
  BenchmarkConfig config;
  Matrix prototypes;        // [K x D], unit rows, doubles as class text features
  LabelSuperset superset;   // K true prototypes followed by K' distractors
  ClassSet classes;
  ModalityMap map_rgb;
  ModalityMap map_nonrgb;
  PairedDataset train;
  PairedDataset test;
  Matrix train_teacher;           // [N_train x D], prototype + latent noise
  std::vector<bool> train_corrupted;
};

inline constexpr double kMinPrototypeAngleDeg = 30.0;

/// Deterministic in the seed. Throws DataError when prototype separation
/// cannot be reached within the retry budget.
SyntheticBenchmark generate_benchmark(const BenchmarkConfig& config);

/// Files written: classes.txt/.eve, superset.txt/.eve, train.evd, test.evd,
/// teacher_train.eve.
void write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir);

/// Reads the files written by write_benchmark (modality maps are not stored).
SyntheticBenchmark read_benchmark(const std::filesystem::path& dir);

}  // namespace edgedistill
