#include "edgedistill/distill.hpp"

#include "edgedistill/errors.hpp"
#include "edgedistill/optim.hpp"
#include "edgedistill/random.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace edgedistill {

Tensor stage1_loss(const Tensor& student_rgb, const Tensor& student_nonrgb, const Tensor& teacher) {
  if (teacher.requires_grad()) throw ContractError("stage-1 teacher features must be detached");
  if (student_rgb.shape() != teacher.shape() || student_nonrgb.shape() != teacher.shape()) {
    throw ContractError("stage-1 loss: student and teacher shapes differ");
  }
  return mean(row_l1_distance(teacher, student_nonrgb) + row_l1_distance(teacher, student_rgb));
}

Tensor single_modality_loss(const Tensor& student, const Tensor& teacher) {
  if (teacher.requires_grad()) throw ContractError("stage-1 teacher features must be detached");
  if (student.shape() != teacher.shape()) throw ContractError("student and teacher shapes differ");
  return mean(row_l1_distance(teacher, student));
}

double mean_l1_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mean_l1_distance shape mismatch");
  return (a - b).cwiseAbs().mean();
}

Stage1Result stage1_train(DenseEncoder student, const Matrix& rgb, const Matrix& nonrgb,
                          const Matrix& teacher, const Stage1Config& config) {
  const Index n = rgb.rows();
  if (n == 0) throw DataError("stage-1 training set is empty");
  if (nonrgb.rows() != n || teacher.rows() != n) {
    throw ContractError("stage-1: rgb, non-rgb and teacher row counts differ");
  }
  if (config.batch_size <= 0 || config.epochs < 0) throw ConfigError("stage-1 batch size/epochs invalid");

  student.set_requires_grad(true);
  AdamW opt(student.parameters(), LrSchedule::cosine(config.base_lr, config.min_lr, config.epochs),
            {0.9, 0.999, 1e-8, config.weight_decay});
  Rng rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  Stage1Result result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const Index b = static_cast<Index>(stop - start);
      Matrix xr(b, rgb.cols()), xn(b, nonrgb.cols()), t(b, teacher.cols());
      for (Index i = 0; i < b; ++i) {
        const Index src = order[start + static_cast<std::size_t>(i)];
        xr.row(i) = rgb.row(src);
        xn.row(i) = nonrgb.row(src);
        t.row(i) = teacher.row(src);
      }
      const Tensor target(std::move(t));
      Tensor loss;
      switch (config.mix) {
        case ModalityMix::kDual:
          loss = stage1_loss(forward(student, Tensor(std::move(xr))),
                             forward(student, Tensor(std::move(xn))), target);
          break;
        case ModalityMix::kRgbOnly:
          loss = single_modality_loss(forward(student, Tensor(std::move(xr))), target);
          break;
        case ModalityMix::kNonRgbOnly:
          loss = single_modality_loss(forward(student, Tensor(std::move(xn))), target);
          break;
      }
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("stage-1 loss became non-finite at epoch " + std::to_string(epoch));
      }
      backward(loss);
      opt.step(epoch);
      total += loss.item();
      ++batches;
    }
    result.loss_trace.push_back(total / batches);
  }
  student.set_requires_grad(false);
  result.student = std::move(student);
  return result;
}

}  // namespace edgedistill
