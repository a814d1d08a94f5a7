#pragma once

#include "edgedistill/encoder.hpp"
#include "edgedistill/errors.hpp"
#include "edgedistill/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace edgedistill {

using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class QuantMode : std::uint8_t { kStatic = 0, kDynamic = 1 };

/// Symmetric uniform integer quantization. Weights are always per output
/// channel, activations always per tensor, rounding is half away from zero.
struct QuantScheme {
  int bits = 8;
  QuantMode mode = QuantMode::kStatic;

  /// Largest representable magnitude, 2^(b-1) - 1.
  std::int32_t qmax() const;
  void validate() const;
};

std::int32_t qmax_for_bits(int bits);

/// Clipping magnitudes and scales, one entry per tensor or per channel.
/// scale[i] * alpha[i] == qmax.
struct QuantParams {
  std::vector<double> alpha;
  std::vector<double> scale;
  std::optional<int> axis;  // empty for per-tensor

  static QuantParams from_alpha(std::vector<double> alpha, int bits, std::optional<int> axis = {});
  static QuantParams from_scale(std::vector<double> scale, int bits, std::optional<int> axis = {});
  std::size_t channels() const { return alpha.size(); }
  bool per_tensor() const { return !axis.has_value(); }
};

double clip(double x, double lo, double hi);

/// alpha = max |values| over the tensor, or per slice along `axis`
/// (0: one entry per row, 1: one per column). A channel with no nonzero value
/// gets alpha = 1 and a warning on std::clog.
QuantParams fit_scale(const Matrix& values, int bits, std::optional<int> axis = {});

namespace detail {
inline double channel_scale(const QuantParams& p, Index r, Index c) {
  if (p.per_tensor()) return p.scale[0];
  return p.scale[static_cast<std::size_t>(*p.axis == 0 ? r : c)];
}
inline void check_params(const QuantParams& p, Index rows, Index cols) {
  if (p.alpha.empty() || p.alpha.size() != p.scale.size()) {
    throw ContractError("quant params are empty or inconsistent");
  }
  if (p.per_tensor()) {
    if (p.channels() != 1) throw ContractError("per-tensor params must hold one scale");
    return;
  }
  const Index expect = *p.axis == 0 ? rows : cols;
  if (static_cast<Index>(p.channels()) != expect) {
    throw ShapeError("per-channel params hold " + std::to_string(p.channels()) +
                     " scales for " + std::to_string(expect) + " channels");
  }
}
}  // namespace detail

/// x_q = clip(round(x * s), -qmax, qmax).
template <typename Derived>
IntMatrix quantize(const Eigen::MatrixBase<Derived>& x, const QuantParams& p, int bits) {
  detail::check_params(p, x.rows(), x.cols());
  const double q = static_cast<double>(qmax_for_bits(bits));
  IntMatrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const double v = static_cast<double>(x(r, c)) * detail::channel_scale(p, r, c);
      out(r, c) = static_cast<std::int32_t>(clip(std::round(v), -q, q));
    }
  }
  return out;
}

/// x~ = x_q / s.
template <typename Derived>
Matrix dequantize(const Eigen::MatrixBase<Derived>& xq, const QuantParams& p) {
  detail::check_params(p, xq.rows(), xq.cols());
  Matrix out(xq.rows(), xq.cols());
  for (Index r = 0; r < xq.rows(); ++r) {
    for (Index c = 0; c < xq.cols(); ++c) {
      out(r, c) = static_cast<double>(xq(r, c)) / detail::channel_scale(p, r, c);
    }
  }
  return out;
}

template <typename Derived>
Matrix fake_quantize(const Eigen::MatrixBase<Derived>& x, const QuantParams& p, int bits) {
  return dequantize(quantize(x, p, bits), p);
}

/// 1 where |x| <= alpha of the element's channel, 0 elsewhere.
Matrix in_range_mask(const Matrix& x, const QuantParams& p);

/// Quantization parameters for one dense layer. `activation` quantizes the
/// layer input; it is absent in dynamic mode.
struct LayerQuantParams {
  QuantParams weight;
  std::optional<QuantParams> activation;
};

/// Per-layer input activations recorded from a float forward pass.
std::vector<Matrix> record_layer_inputs(const DenseEncoder& encoder, const Matrix& batch);

/// Runs both modalities through the float encoder, fits per-tensor
/// activation scales from the observed layer-input maxima and per-channel
/// weight scales from the weights.
std::vector<LayerQuantParams> calibrate_static(const DenseEncoder& encoder, const Matrix& rgb,
                                               const Matrix& nonrgb, const QuantScheme& scheme);

/// Weight-only parameters; activation scales are left to the forward pass.
std::vector<LayerQuantParams> weight_params(const DenseEncoder& encoder, const QuantScheme& scheme);

struct QuantizedLayer {
  IntMatrix weight_q;  // [out x in]
  QuantParams weight;  // per output channel (axis 0)
  Matrix bias;         // [1 x out], full precision
  Activation activation = Activation::kIdentity;
  std::optional<double> activation_alpha;  // static mode only
};

/// Integer-weight encoder. Forward quantizes each layer input per tensor
/// (static alpha, or the batch maximum in dynamic mode), multiplies by the
/// dequantized integer weights and adds the float bias.
class QuantizedEncoder {
 public:
  QuantizedEncoder() = default;
  QuantizedEncoder(QuantScheme scheme, std::vector<QuantizedLayer> layers);

  const QuantScheme& scheme() const { return scheme_; }
  const std::vector<QuantizedLayer>& layers() const { return layers_; }
  Index input_dim() const { return layers_.front().weight_q.cols(); }
  Index output_dim() const { return layers_.back().weight_q.rows(); }

  Matrix forward(const Matrix& batch) const;
  /// Float encoder holding the dequantized weights.
  DenseEncoder dequantized() const;

 private:
  QuantScheme scheme_;
  std::vector<QuantizedLayer> layers_;
  std::vector<Matrix> dequantized_weights_;
};

/// Post-training quantization. Alpha values are rounded to float32 so the
/// result matches its EVQ1 checkpoint exactly.
QuantizedEncoder ptq(const DenseEncoder& encoder, const std::vector<LayerQuantParams>& params,
                     const QuantScheme& scheme);

/// Dense layer with fake quantization on its weight (per channel, scale
/// refitted from the current weight on every call) and on its input (per
/// tensor: calibrated alpha in static mode, batch maximum in dynamic mode).
/// Gradients pass straight through where the value lies inside [-alpha, alpha].
class FakeQuantLayer {
 public:
  FakeQuantLayer(DenseLayer layer, QuantScheme scheme, std::optional<double> activation_alpha);

  /// With `track_input` a graph-free input is re-rooted as a leaf so that
  /// backward() can report the gradient with respect to it.
  Tensor forward(const Tensor& input, bool track_input = true);
  /// Gradient with respect to the last forward input; also accumulates the
  /// weight and bias gradients. Throws ContractError before any forward.
  Matrix backward(const Matrix& upstream);

  const DenseLayer& layer() const { return layer_; }
  std::optional<double> activation_alpha() const { return activation_alpha_; }
  /// Activation alpha used by the most recent forward.
  double last_activation_alpha() const { return last_alpha_; }

 private:
  DenseLayer layer_;  // shares parameters with the wrapped encoder
  QuantScheme scheme_;
  std::optional<double> activation_alpha_;
  Tensor last_input_;
  Tensor last_output_;
  double last_alpha_ = 0.0;
};

/// Fake-quantized view over a float encoder; training through it updates
/// the encoder's parameters.
class FakeQuantEncoder {
 public:
  FakeQuantEncoder(const DenseEncoder& encoder, QuantScheme scheme,
                   const std::vector<LayerQuantParams>& params);

  Tensor forward(const Tensor& batch);
  /// Graph-free fake-quantized evaluation.
  Matrix evaluate(const Matrix& batch) const;

  const std::vector<FakeQuantLayer>& layers() const { return layers_; }

 private:
  std::vector<FakeQuantLayer> layers_;
  QuantScheme scheme_;
};

/// Bytes of the EVF1 float32 checkpoint of `encoder`.
std::uint64_t model_size(const DenseEncoder& encoder);
/// Bytes of the EVQ1 checkpoint: integer weights (1, 2 or 4 bytes each by
/// bit-width), float32 per-channel scales, float32 biases and headers.
std::uint64_t model_size(const DenseEncoder& encoder, const QuantScheme& scheme);

/// Storage bytes per integer weight for a bit-width.
int element_bytes(int bits);

}  // namespace edgedistill
