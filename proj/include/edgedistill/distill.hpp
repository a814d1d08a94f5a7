#pragma once

#include "edgedistill/encoder.hpp"
#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace edgedistill {

/// Which student inputs are matched against the teacher feature.
enum class ModalityMix : std::uint8_t { kDual, kRgbOnly, kNonRgbOnly };

/// mean_i [ L1(teacher_i, nonrgb_i) + L1(teacher_i, rgb_i) ] with L1 the mean
/// absolute difference over the embedding. The teacher must not require a
/// gradient.
Tensor stage1_loss(const Tensor& student_rgb, const Tensor& student_nonrgb, const Tensor& teacher);

/// Single-modality variant: mean_i L1(teacher_i, student_i).
Tensor single_modality_loss(const Tensor& student, const Tensor& teacher);

struct Stage1Config {
  int epochs = 120;
  int batch_size = 32;
  double base_lr = 1e-4;
  double min_lr = 5e-6;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  ModalityMix mix = ModalityMix::kDual;
};

struct Stage1Result {
  DenseEncoder student;
  std::vector<double> loss_trace;  // per-epoch mean batch loss
};

/// Shuffled mini-batch AdamW distillation with a cosine schedule. Both
/// modalities pass through the same student. Throws DivergenceError if the
/// loss turns non-finite.
Stage1Result stage1_train(DenseEncoder student, const Matrix& rgb, const Matrix& nonrgb,
                          const Matrix& teacher, const Stage1Config& config);

/// Mean per-row L1 distance between two embedding sets.
double mean_l1_distance(const Matrix& a, const Matrix& b);

}  // namespace edgedistill
