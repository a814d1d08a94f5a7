#include "edgedistill/qacl.hpp"

#include "edgedistill/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace edgedistill {

void Stage2Config::validate() const {
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (neg_set_size < 1) throw ConfigError("negative set size must be at least 1");
  if (neg_pool < 1) throw ConfigError("negative pool must be at least 1");
  if (epochs < 0 || batch_size <= 0) throw ConfigError("stage-2 epochs/batch size invalid");
}

double l1_distance(ConstRowRef a, ConstRowRef b) {
  if (a.size() != b.size()) throw ShapeError("l1_distance dimension mismatch");
  return (a - b).cwiseAbs().mean();
}

std::optional<std::size_t> select_positive(ConstRowRef anchor, const Matrix& candidates) {
  if (candidates.rows() == 0) return std::nullopt;
  std::size_t best = 0;
  double best_d = l1_distance(anchor, candidates.row(0));
  for (Index k = 1; k < candidates.rows(); ++k) {
    const double d = l1_distance(anchor, candidates.row(k));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

std::vector<std::size_t> filter_semi_hard(ConstRowRef anchor, ConstRowRef positive,
                                          const Matrix& candidates, double margin,
                                          std::size_t max_keep) {
  const double dap = l1_distance(anchor, positive);
  std::vector<std::size_t> kept;
  for (Index k = 0; k < candidates.rows() && kept.size() < max_keep; ++k) {
    const double dan = l1_distance(anchor, candidates.row(k));
    if (dan > dap && dan < dap + margin) kept.push_back(static_cast<std::size_t>(k));
  }
  return kept;
}

std::vector<std::size_t> filter_hard(ConstRowRef anchor, ConstRowRef positive,
                                     const Matrix& candidates, std::size_t max_keep) {
  const double dap = l1_distance(anchor, positive);
  std::vector<std::size_t> kept;
  for (Index k = 0; k < candidates.rows() && kept.size() < max_keep; ++k) {
    if (l1_distance(anchor, candidates.row(k)) < dap) kept.push_back(static_cast<std::size_t>(k));
  }
  return kept;
}

double triplet_loss(ConstRowRef anchor, ConstRowRef positive, const Matrix& negatives, double margin) {
  if (negatives.rows() == 0) return 0.0;
  const double dap = l1_distance(anchor, positive);
  double total = 0.0;
  for (Index j = 0; j < negatives.rows(); ++j) total += dap - l1_distance(anchor, negatives.row(j)) + margin;
  return total / static_cast<double>(negatives.rows());
}

namespace {

Matrix gather(const EmbeddingViews& e, const std::vector<SampleRef>& refs) {
  Matrix out(static_cast<Index>(refs.size()), e.rgb.cols());
  for (std::size_t i = 0; i < refs.size(); ++i) out.row(static_cast<Index>(i)) = e.row(refs[i]);
  return out;
}

}  // namespace

std::vector<Triplet> build_epoch_triplets(const std::vector<std::size_t>& pseudo_labels,
                                          const EmbeddingViews& embeddings,
                                          const Stage2Config& config, Rng& rng) {
  config.validate();
  const std::size_t n = pseudo_labels.size();
  if (static_cast<std::size_t>(embeddings.rgb.rows()) != n ||
      static_cast<std::size_t>(embeddings.nonrgb.rows()) != n) {
    throw ContractError("triplet construction: embeddings do not cover every sample");
  }
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[pseudo_labels[i]].push_back(i);

  std::vector<Triplet> triplets;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& same = members[pseudo_labels[i]];
    if (same.size() < 2 || same.size() == n) continue;

    std::vector<std::size_t> differing;
    differing.reserve(n - same.size());
    for (std::size_t j = 0; j < n; ++j) {
      if (pseudo_labels[j] != pseudo_labels[i]) differing.push_back(j);
    }

    for (Modality mod : {Modality::kRgb, Modality::kNonRgb}) {
      const SampleRef anchor{i, mod};
      const auto a = embeddings.row(anchor);

      std::vector<SampleRef> pos;
      for (std::size_t j : same) {
        if (j == i) continue;
        if (config.positive_mode == PositiveMode::kCrossModal) {
          pos.push_back({j, other(mod)});
        } else {
          pos.push_back({j, Modality::kRgb});
          pos.push_back({j, Modality::kNonRgb});
        }
      }
      const auto k = select_positive(a, gather(embeddings, pos));
      if (!k) continue;
      const SampleRef positive = pos[*k];

      // Pool of differing-label instances, each sample in both modalities.
      std::vector<SampleRef> pool;
      const std::size_t available = 2 * differing.size();
      if (available <= config.neg_pool) {
        for (std::size_t j : differing) {
          pool.push_back({j, Modality::kRgb});
          pool.push_back({j, Modality::kNonRgb});
        }
      } else {
        // Partial Fisher-Yates over the virtual list of instances.
        std::vector<std::size_t> ids(available);
        for (std::size_t t = 0; t < available; ++t) ids[t] = t;
        for (std::size_t t = 0; t < config.neg_pool; ++t) {
          const std::size_t r = t + static_cast<std::size_t>(rng.below(available - t));
          std::swap(ids[t], ids[r]);
          pool.push_back({differing[ids[t] / 2], ids[t] % 2 == 0 ? Modality::kRgb : Modality::kNonRgb});
        }
      }

      const Matrix cand = gather(embeddings, pool);
      const auto p = embeddings.row(positive);
      const auto kept = config.sampling == Sampling::kSemiHard
                            ? filter_semi_hard(a, p, cand, config.margin, config.neg_set_size)
                            : filter_hard(a, p, cand, config.neg_set_size);
      if (kept.empty()) continue;
      Triplet t{anchor, positive, {}, config.margin};
      for (std::size_t idx : kept) t.negatives.push_back(pool[idx]);
      triplets.push_back(std::move(t));
    }
  }
  return triplets;
}

namespace {

void check_not_collapsed(const Matrix& rgb, const Matrix& nonrgb, int epoch) {
  const Eigen::RowVectorXd lo = rgb.colwise().minCoeff().cwiseMin(nonrgb.colwise().minCoeff());
  const Eigen::RowVectorXd hi = rgb.colwise().maxCoeff().cwiseMax(nonrgb.colwise().maxCoeff());
  if ((hi - lo).maxCoeff() < 1e-6) {
    throw DivergenceError("stage-2 model collapse: all embeddings within 1e-6 at epoch " +
                          std::to_string(epoch));
  }
}

}  // namespace

Stage2Result stage2_train(DenseEncoder student, const Matrix& rgb, const Matrix& nonrgb,
                          const std::vector<std::size_t>& pseudo_labels, const QuantScheme& scheme,
                          const std::vector<LayerQuantParams>& calibration,
                          const Stage2Config& config, const TripletObserver& observer) {
  config.validate();
  if (rgb.rows() != nonrgb.rows() || static_cast<std::size_t>(rgb.rows()) != pseudo_labels.size()) {
    throw ContractError("stage-2: inputs and pseudo-labels disagree in size");
  }
  student.set_requires_grad(true);
  FakeQuantEncoder fq(student, scheme, calibration);
  AdamW opt(student.parameters(), config.schedule, {0.9, 0.999, 1e-8, config.weight_decay});
  Rng rng(config.seed);

  Stage2Result result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Matrix emb_rgb = fq.evaluate(rgb);
    const Matrix emb_nonrgb = fq.evaluate(nonrgb);
    check_not_collapsed(emb_rgb, emb_nonrgb, epoch);
    const EmbeddingViews views{emb_rgb, emb_nonrgb};
    std::vector<Triplet> triplets = build_epoch_triplets(pseudo_labels, views, config, rng);
    if (observer) observer(epoch, views, triplets);
    rng.shuffle(triplets);

    double total = 0.0;
    int steps = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < triplets.size(); start += bs) {
      const std::size_t stop = std::min(triplets.size(), start + bs);
      // Unique instances of this batch, stacked into a single forward pass.
      std::map<std::pair<std::size_t, int>, Index> slot;
      std::vector<SampleRef> refs;
      auto slot_of = [&](const SampleRef& r) {
        auto key = std::make_pair(r.sample, static_cast<int>(r.modality));
        auto it = slot.find(key);
        if (it != slot.end()) return it->second;
        const Index s = static_cast<Index>(refs.size());
        slot.emplace(key, s);
        refs.push_back(r);
        return s;
      };
      std::vector<Index> ai, pi, ni;
      std::vector<double> w;
      const double inv_t = 1.0 / static_cast<double>(stop - start);
      for (std::size_t t = start; t < stop; ++t) {
        const auto& tr = triplets[t];
        const Index a = slot_of(tr.anchor), p = slot_of(tr.positive);
        const double wt = inv_t / static_cast<double>(tr.negatives.size());
        for (const auto& neg : tr.negatives) {
          ai.push_back(a);
          pi.push_back(p);
          ni.push_back(slot_of(neg));
          w.push_back(wt);
        }
      }
      Matrix x(static_cast<Index>(refs.size()), rgb.cols());
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const Matrix& src = refs[r].modality == Modality::kRgb ? rgb : nonrgb;
        x.row(static_cast<Index>(r)) = src.row(static_cast<Index>(refs[r].sample));
      }
      const Tensor e = fq.forward(Tensor(std::move(x)));
      const Tensor ea = gather_rows(e, ai);
      const Tensor dap = row_l1_distance(ea, gather_rows(e, pi));
      const Tensor dan = row_l1_distance(ea, gather_rows(e, ni));
      const Matrix weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Index>(w.size()));
      const Tensor loss = add_scalar(weighted_sum(dap - dan, weights), config.margin);
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("stage-2 loss became non-finite at epoch " + std::to_string(epoch));
      }
      backward(loss);
      opt.step(epoch);
      total += loss.item();
      ++steps;
    }
    result.trace.push_back({epoch, steps > 0 ? total / steps : 0.0, triplets.size(),
                            config.schedule.at(epoch)});
  }
  student.set_requires_grad(false);
  result.student = std::move(student);
  return result;
}

}  // namespace edgedistill
