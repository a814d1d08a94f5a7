#include "edgedistill/curation.hpp"

#include "edgedistill/errors.hpp"

#include <cmath>
#include <sstream>

namespace edgedistill {

void LabelSuperset::validate() const {
  if (labels.size() != static_cast<std::size_t>(text_features.rows())) {
    throw DataError("superset has " + std::to_string(labels.size()) + " labels but " +
                    std::to_string(text_features.rows()) + " text features");
  }
  if (labels.size() < 2) throw DataError("superset needs at least two labels");
  for (Index k = 0; k < text_features.rows(); ++k) {
    if (std::abs(text_features.row(k).norm() - 1.0) > 1e-6) {
      throw DataError("superset text feature " + std::to_string(k) + " is not unit norm");
    }
  }
}

double confidence_score(ConstRowRef feature, const LabelSuperset& superset, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (feature.size() != superset.text_features.cols()) {
    throw ShapeError("feature dim " + std::to_string(feature.size()) + " vs text dim " +
                     std::to_string(superset.text_features.cols()));
  }
  if (std::abs(feature.norm() - 1.0) > 1e-6) {
    throw ContractError("confidence_score needs a unit-norm feature");
  }
  const Eigen::VectorXd logits = temperature * (superset.text_features * feature.transpose());
  const double top = logits.maxCoeff();
  // max_k softmax_k = exp(top) / sum exp(l) = 1 / sum exp(l - top)
  return 1.0 / (logits.array() - top).exp().sum();
}

std::size_t pseudo_label(ConstRowRef feature, const LabelSuperset& superset) {
  if (feature.size() != superset.text_features.cols()) {
    throw ShapeError("feature dim " + std::to_string(feature.size()) + " vs text dim " +
                     std::to_string(superset.text_features.cols()));
  }
  const Eigen::VectorXd sims = superset.text_features * feature.transpose();
  Index best = 0;
  for (Index k = 1; k < sims.size(); ++k) {
    if (sims(k) > sims(best)) best = k;
  }
  return static_cast<std::size_t>(best);
}

CuratedDataset curate(const Matrix& teacher_rgb_features, const LabelSuperset& superset,
                      double tau_c, double temperature) {
  superset.validate();
  CuratedDataset out;
  out.tau_c = tau_c;
  out.raw_count = static_cast<std::size_t>(teacher_rgb_features.rows());
  for (Index i = 0; i < teacher_rgb_features.rows(); ++i) {
    const double n = teacher_rgb_features.row(i).norm();
    if (!(n > 0.0)) throw DegenerateInputError("teacher feature " + std::to_string(i) + " is zero");
    const RowVector f = teacher_rgb_features.row(i) / n;
    const double c = confidence_score(f, superset, temperature);
    if (c >= tau_c) {
      out.indices.push_back(static_cast<std::size_t>(i));
      out.confidences.push_back(c);
      out.pseudo_labels.push_back(pseudo_label(f, superset));
    }
  }
  if (out.indices.empty()) {
    std::ostringstream msg;
    msg << "curation emptied dataset: no sample reached tau_c = " << tau_c;
    throw DataError(msg.str());
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& indices) {
  Matrix out(static_cast<Index>(indices.size()), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= static_cast<std::size_t>(m.rows())) throw ShapeError("row index out of range");
    out.row(static_cast<Index>(i)) = m.row(static_cast<Index>(indices[i]));
  }
  return out;
}

}  // namespace edgedistill
