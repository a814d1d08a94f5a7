#pragma once

#include "edgedistill/encoder.hpp"
#include "edgedistill/optim.hpp"
#include "edgedistill/quant.hpp"
#include "edgedistill/random.hpp"
#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace edgedistill {

enum class Modality : std::uint8_t { kRgb = 0, kNonRgb = 1 };

inline Modality other(Modality m) { return m == Modality::kRgb ? Modality::kNonRgb : Modality::kRgb; }

struct SampleRef {
  std::size_t sample = 0;
  Modality modality = Modality::kRgb;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct Triplet {
  SampleRef anchor;
  SampleRef positive;
  std::vector<SampleRef> negatives;  // 1..J entries
  double margin = 0.3;
};

enum class Sampling : std::uint8_t { kSemiHard, kHard };
enum class PositiveMode : std::uint8_t { kCrossModal, kAny };

struct Stage2Config {
  double margin = 0.3;
  std::size_t neg_set_size = 3;  // J
  std::size_t neg_pool = 10;     // random candidates drawn before filtering
  LrSchedule schedule = LrSchedule::constant(1e-6);
  double weight_decay = 0.05;
  int epochs = 10;
  int batch_size = 32;  // triplets per optimizer step
  Sampling sampling = Sampling::kSemiHard;
  PositiveMode positive_mode = PositiveMode::kCrossModal;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean absolute difference between two embeddings.
double l1_distance(ConstRowRef a, ConstRowRef b);

/// Index of the candidate row nearest to the anchor in L1; lowest index on
/// ties; empty when there are no candidates.
std::optional<std::size_t> select_positive(ConstRowRef anchor, const Matrix& candidates);

/// Candidates n with d(a,p) < d(a,n) < d(a,p) + margin, first `max_keep` in
/// row order.
std::vector<std::size_t> filter_semi_hard(ConstRowRef anchor, ConstRowRef positive,
                                          const Matrix& candidates, double margin,
                                          std::size_t max_keep);

/// Candidates n with d(a,n) < d(a,p), first `max_keep` in row order.
std::vector<std::size_t> filter_hard(ConstRowRef anchor, ConstRowRef positive,
                                     const Matrix& candidates, std::size_t max_keep);

/// (1/J) sum_j [ d(a,p) - d(a,n_j) + margin ] over the rows of `negatives`,
/// with no hinge; 0 when there are no negatives.
double triplet_loss(ConstRowRef anchor, ConstRowRef positive, const Matrix& negatives, double margin);

/// Embeddings of both modalities, row i belonging to sample i.
struct EmbeddingViews {
  const Matrix& rgb;
  const Matrix& nonrgb;

  const Matrix& of(Modality m) const { return m == Modality::kRgb ? rgb : nonrgb; }
  auto row(const SampleRef& r) const { return of(r.modality).row(static_cast<Index>(r.sample)); }
};

/// One pass over every (sample, modality) anchor. The positive is the
/// nearest same-label instance from another sample (opposite modality in
/// cross-modal mode); negatives come from a pool of differing-label
/// instances (all of them when there are at most `neg_pool`, otherwise a
/// random draw without replacement) filtered by the sampling rule. Anchors
/// without a positive or a retained negative produce no triplet.
std::vector<Triplet> build_epoch_triplets(const std::vector<std::size_t>& pseudo_labels,
                                          const EmbeddingViews& embeddings,
                                          const Stage2Config& config, Rng& rng);

struct Stage2Epoch {
  int epoch = 0;
  double loss = 0.0;
  std::size_t triplets = 0;
  double lr = 0.0;
};

struct Stage2Result {
  DenseEncoder student;
  std::vector<Stage2Epoch> trace;
};

/// Called once per epoch with the embeddings the triplets were built from.
using TripletObserver =
    std::function<void(int epoch, const EmbeddingViews& embeddings, const std::vector<Triplet>&)>;

/// Quantization-aware contrastive refinement: each epoch recomputes the
/// fake-quantized embeddings, rebuilds triplets and runs AdamW over
/// mini-batches of them. Throws DivergenceError when all embeddings collapse
/// to within 1e-6 of each other.
Stage2Result stage2_train(DenseEncoder student, const Matrix& rgb, const Matrix& nonrgb,
                          const std::vector<std::size_t>& pseudo_labels, const QuantScheme& scheme,
                          const std::vector<LayerQuantParams>& calibration,
                          const Stage2Config& config, const TripletObserver& observer = {});

}  // namespace edgedistill
