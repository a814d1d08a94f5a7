#pragma once

#include "edgedistill/tensor.hpp"

#include <string>
#include <vector>

namespace edgedistill {

/// Candidate labels with unit-norm text features, one row per label.
struct LabelSuperset {
  std::vector<std::string> labels;
  Matrix text_features;

  std::size_t size() const { return labels.size(); }
  /// Throws DataError unless labels and rows agree, there are at least two,
  /// and every row has unit norm within 1e-6.
  void validate() const;
};

/// Samples that survive the confidence threshold. `indices` point into the
/// raw sample list; the other vectors run parallel to it.
struct CuratedDataset {
  std::vector<std::size_t> indices;
  std::vector<double> confidences;
  std::vector<std::size_t> pseudo_labels;
  double tau_c = 0.0;
  std::size_t raw_count = 0;

  std::size_t size() const { return indices.size(); }
};

/// Largest softmax probability of temperature * <feature, text_k> over the
/// superset. `feature` must have unit norm (1e-6).
double confidence_score(ConstRowRef feature, const LabelSuperset& superset, double temperature);

/// argmax_k <feature, text_k>; ties resolve to the lowest index.
std::size_t pseudo_label(ConstRowRef feature, const LabelSuperset& superset);

/// Keeps every sample whose (row-normalized) teacher feature scores at
/// least tau_c. Throws DataError when nothing survives.
CuratedDataset curate(const Matrix& teacher_rgb_features, const LabelSuperset& superset,
                      double tau_c, double temperature);

/// Rows of `m` selected by `indices`, in order.
Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& indices);

}  // namespace edgedistill
