#pragma once

#include "edgedistill/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace edgedistill {

/// Evaluation classes with unit-norm text features.
struct ClassSet {
  std::vector<std::string> names;
  Matrix text_features;

  std::size_t size() const { return names.size(); }
  void validate() const;
};

/// argmax_Y <normalize(embedding), text_Y>; lowest index on ties.
std::size_t classify(ConstRowRef embedding, const ClassSet& classes);

inline constexpr int kAngleBins = 90;  // 2 degrees each over [0, 180]

struct AngleStats {
  double mean_deg = 0.0;
  std::array<std::uint64_t, kAngleBins> histogram{};
  std::uint64_t count = 0;
};

/// Angle in degrees between an embedding and a unit text feature, with the
/// cosine clamped to [-1, 1].
double angle_deg(ConstRowRef embedding, ConstRowRef text_feature);

/// Angles between each embedding and the text feature of its true class.
AngleStats angle_stats(const Matrix& embeddings, const std::vector<std::int32_t>& labels,
                       const ClassSet& classes);
/// Pools two angle sets (e.g. both modalities).
AngleStats merge(const AngleStats& a, const AngleStats& b);

/// Row = true class, column = predicted class.
using Confusion = std::vector<std::vector<std::uint64_t>>;

struct EvalReport {
  double acc_nonrgb = 0.0;
  double acc_rgb = 0.0;
  double acc_avg = 0.0;
  Confusion confusion_nonrgb;
  Confusion confusion_rgb;
  AngleStats angles_nonrgb;
  AngleStats angles_rgb;
  AngleStats angles_all;
};

using EmbedFn = std::function<Matrix(const Matrix&)>;

/// Classifies both modalities of every labeled pair through `embed`.
/// Throws DataError naming the sample when a label is outside the class set.
EvalReport evaluate(const EmbedFn& embed, const Matrix& rgb, const Matrix& nonrgb,
                    const std::vector<std::int32_t>& labels, const ClassSet& classes);

}  // namespace edgedistill
