#include "edgedistill/optim.hpp"

#include "edgedistill/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace edgedistill {

double LrSchedule::at(int epoch) const {
  if (kind == Kind::kConstant) return base_lr;
  if (total_epochs <= 1) return base_lr;
  const double t = std::clamp(static_cast<double>(epoch), 0.0, static_cast<double>(total_epochs - 1));
  const double frac = t / static_cast<double>(total_epochs - 1);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(std::vector<Tensor> params, LrSchedule schedule, AdamWHyper hyper)
    : params_(std::move(params)), schedule_(schedule), hyper_(hyper) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::step(int epoch) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw ContractError("adamw step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++steps_;
  const double lr = schedule_.at(epoch);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& g = params_[i].grad();
    m_[i] = hyper_.beta1 * m_[i] + (1.0 - hyper_.beta1) * g;
    v_[i] = hyper_.beta2 * v_[i] + (1.0 - hyper_.beta2) * g.cwiseProduct(g);
    Matrix& p = params_[i].mutable_value();
    p *= (1.0 - lr * hyper_.weight_decay);
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + hyper_.eps);
    params_[i].clear_grad();
  }
}

}  // namespace edgedistill
