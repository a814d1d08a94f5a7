#include "edgedistill/eval.hpp"

#include "edgedistill/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace edgedistill {

void ClassSet::validate() const {
  if (names.size() != static_cast<std::size_t>(text_features.rows())) {
    throw DataError("class set names and text features disagree in count");
  }
  if (names.size() < 2) throw DataError("class set needs at least two classes");
  for (Index k = 0; k < text_features.rows(); ++k) {
    if (std::abs(text_features.row(k).norm() - 1.0) > 1e-6) {
      throw DataError("class text feature " + std::to_string(k) + " is not unit norm");
    }
  }
}

std::size_t classify(ConstRowRef embedding, const ClassSet& classes) {
  if (embedding.size() != classes.text_features.cols()) {
    throw ShapeError("embedding dim " + std::to_string(embedding.size()) + " vs class dim " +
                     std::to_string(classes.text_features.cols()));
  }
  const double n = embedding.norm();
  if (!(n > 0.0)) throw DegenerateInputError("classify: zero embedding");
  const Eigen::VectorXd sims = classes.text_features * (embedding.transpose() / n);
  Index best = 0;
  for (Index k = 1; k < sims.size(); ++k) {
    if (sims(k) > sims(best)) best = k;
  }
  return static_cast<std::size_t>(best);
}

double angle_deg(ConstRowRef embedding, ConstRowRef text_feature) {
  const double n = embedding.norm();
  if (!(n > 0.0)) throw DegenerateInputError("angle of a zero embedding");
  const double cosine = std::clamp(embedding.dot(text_feature) / (n * text_feature.norm()), -1.0, 1.0);
  return std::acos(cosine) * 180.0 / std::numbers::pi;
}

namespace {
void check_label(std::int32_t y, std::size_t i, const ClassSet& classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= classes.size()) {
    throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(y) +
                    " outside the class set of size " + std::to_string(classes.size()));
  }
}
}  // namespace

AngleStats angle_stats(const Matrix& embeddings, const std::vector<std::int32_t>& labels,
                       const ClassSet& classes) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw ContractError("angle_stats: embeddings and labels differ in count");
  }
  AngleStats s;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i], i, classes);
    const double a = angle_deg(embeddings.row(static_cast<Index>(i)), classes.text_features.row(labels[i]));
    total += a;
    const int bin = std::min(kAngleBins - 1, static_cast<int>(a / (180.0 / kAngleBins)));
    ++s.histogram[static_cast<std::size_t>(bin)];
  }
  s.count = labels.size();
  s.mean_deg = labels.empty() ? 0.0 : total / static_cast<double>(labels.size());
  return s;
}

AngleStats merge(const AngleStats& a, const AngleStats& b) {
  AngleStats s;
  s.count = a.count + b.count;
  for (std::size_t k = 0; k < s.histogram.size(); ++k) s.histogram[k] = a.histogram[k] + b.histogram[k];
  s.mean_deg = s.count == 0 ? 0.0
                            : (a.mean_deg * static_cast<double>(a.count) +
                               b.mean_deg * static_cast<double>(b.count)) /
                                  static_cast<double>(s.count);
  return s;
}

EvalReport evaluate(const EmbedFn& embed, const Matrix& rgb, const Matrix& nonrgb,
                    const std::vector<std::int32_t>& labels, const ClassSet& classes) {
  classes.validate();
  if (rgb.rows() != nonrgb.rows() || static_cast<std::size_t>(rgb.rows()) != labels.size()) {
    throw ContractError("evaluate: modalities and labels differ in count");
  }
  if (labels.empty()) throw DataError("evaluate: empty test set");
  for (std::size_t i = 0; i < labels.size(); ++i) check_label(labels[i], i, classes);

  auto run = [&](const Matrix& inputs, double& acc, Confusion& conf, AngleStats& angles) {
    const Matrix emb = embed(inputs);
    conf.assign(classes.size(), std::vector<std::uint64_t>(classes.size(), 0));
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t pred = classify(emb.row(static_cast<Index>(i)), classes);
      ++conf[static_cast<std::size_t>(labels[i])][pred];
      if (pred == static_cast<std::size_t>(labels[i])) ++correct;
    }
    acc = static_cast<double>(correct) / static_cast<double>(labels.size());
    angles = angle_stats(emb, labels, classes);
  };

  EvalReport r;
  run(nonrgb, r.acc_nonrgb, r.confusion_nonrgb, r.angles_nonrgb);
  run(rgb, r.acc_rgb, r.confusion_rgb, r.angles_rgb);
  r.acc_avg = (r.acc_nonrgb + r.acc_rgb) / 2.0;
  r.angles_all = merge(r.angles_nonrgb, r.angles_rgb);
  return r;
}

}  // namespace edgedistill
