#pragma once

#include "edgedistill/random.hpp"
#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <vector>

namespace edgedistill {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [1 x out]
  Activation activation = Activation::kIdentity;

  Index in_features() const { return weight.cols(); }
  Index out_features() const { return weight.rows(); }
};

/// Multilayer dense network: relu on hidden layers, identity on the output.
/// Copies are deep; every copy owns its parameters.
class DenseEncoder {
 public:
  DenseEncoder() = default;
  explicit DenseEncoder(std::vector<DenseLayer> layers);

  DenseEncoder(const DenseEncoder& other);
  DenseEncoder& operator=(const DenseEncoder& other);
  DenseEncoder(DenseEncoder&&) noexcept = default;
  DenseEncoder& operator=(DenseEncoder&&) noexcept = default;

  /// dims = {in, hidden..., out}; weights uniform in +-sqrt(6/(fan_in+fan_out)),
  /// biases zero.
  static DenseEncoder random(std::span<const Index> dims, Rng& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }
  Index input_dim() const;
  Index output_dim() const;
  Index parameter_count() const;

  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool flag);

 private:
  void validate() const;

  std::vector<DenseLayer> layers_;
};

/// Graph-building forward pass; `batch` is [B x in].
Tensor forward(const DenseEncoder& encoder, const Tensor& batch);
/// Pure evaluation without a graph; safe to call concurrently.
Matrix forward(const DenseEncoder& encoder, const Matrix& batch);

/// Rounds every parameter to the nearest float32 value (the checkpoint precision).
void round_to_float(DenseEncoder& encoder);

}  // namespace edgedistill
