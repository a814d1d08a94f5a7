#pragma once

#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <vector>

namespace edgedistill {

/// Per-epoch learning rate. Cosine decays from base_lr at epoch 0 to min_lr at
/// epoch total_epochs - 1 and stays there afterwards.
struct LrSchedule {
  enum class Kind : std::uint8_t { kCosine, kConstant };

  Kind kind = Kind::kConstant;
  double base_lr = 1e-4;
  double min_lr = 0.0;
  int total_epochs = 1;

  static LrSchedule cosine(double base_lr, double min_lr, int total_epochs) {
    return {Kind::kCosine, base_lr, min_lr, total_epochs};
  }
  static LrSchedule constant(double lr) { return {Kind::kConstant, lr, lr, 1}; }

  double at(int epoch) const;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Holds handles to the parameters, so
/// updates are visible through the owning encoder.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, LrSchedule schedule, AdamWHyper hyper = {});

  /// Applies one update using the lr scheduled for `epoch`, then clears grads.
  /// Throws ContractError if any parameter has no gradient.
  void step(int epoch);

  std::int64_t step_count() const { return steps_; }
  const LrSchedule& schedule() const { return schedule_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  LrSchedule schedule_;
  AdamWHyper hyper_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t steps_ = 0;
};

}  // namespace edgedistill
