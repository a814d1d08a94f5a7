#include "edgedistill/quant.hpp"

#include <algorithm>
#include <iostream>
#include <string>

namespace edgedistill {

std::int32_t qmax_for_bits(int bits) {
  if (bits < 2 || bits > 31) throw ContractError("bit-width must lie in [2, 31], got " + std::to_string(bits));
  return static_cast<std::int32_t>((std::int64_t{1} << (bits - 1)) - 1);
}

std::int32_t QuantScheme::qmax() const { return qmax_for_bits(bits); }
void QuantScheme::validate() const { (void)qmax(); }

QuantParams QuantParams::from_alpha(std::vector<double> alpha, int bits, std::optional<int> axis) {
  const double q = static_cast<double>(qmax_for_bits(bits));
  QuantParams p;
  p.scale.reserve(alpha.size());
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ContractError("alpha must be positive and finite");
    p.scale.push_back(q / a);
  }
  p.alpha = std::move(alpha);
  p.axis = axis;
  return p;
}

QuantParams QuantParams::from_scale(std::vector<double> scale, int bits, std::optional<int> axis) {
  const double q = static_cast<double>(qmax_for_bits(bits));
  QuantParams p;
  p.alpha.reserve(scale.size());
  for (double s : scale) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractError("scale must be positive and finite");
    p.alpha.push_back(q / s);
  }
  p.scale = std::move(scale);
  p.axis = axis;
  return p;
}

double clip(double x, double lo, double hi) {
  if (lo > hi) throw ContractError("clip: lower bound exceeds upper bound");
  if (x < lo) return lo;
  if (x > hi) return hi;
  return x;
}

namespace {
double max_or_unit(double m, const char* what, Index channel) {
  if (m > 0.0) return m;
  std::clog << "warning: " << what << " channel " << channel
            << " is all zero; using alpha = 1\n";
  return 1.0;
}
}  // namespace

QuantParams fit_scale(const Matrix& values, int bits, std::optional<int> axis) {
  if (values.size() == 0) throw ContractError("fit_scale on an empty tensor");
  std::vector<double> alpha;
  if (!axis) {
    alpha.push_back(max_or_unit(values.cwiseAbs().maxCoeff(), "tensor", 0));
  } else if (*axis == 0) {
    for (Index r = 0; r < values.rows(); ++r) {
      alpha.push_back(max_or_unit(values.row(r).cwiseAbs().maxCoeff(), "row", r));
    }
  } else if (*axis == 1) {
    for (Index c = 0; c < values.cols(); ++c) {
      alpha.push_back(max_or_unit(values.col(c).cwiseAbs().maxCoeff(), "column", c));
    }
  } else {
    throw ContractError("fit_scale axis must be 0 or 1");
  }
  return QuantParams::from_alpha(std::move(alpha), bits, axis);
}

Matrix in_range_mask(const Matrix& x, const QuantParams& p) {
  detail::check_params(p, x.rows(), x.cols());
  Matrix mask(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const double a = p.per_tensor() ? p.alpha[0]
                                      : p.alpha[static_cast<std::size_t>(*p.axis == 0 ? r : c)];
      mask(r, c) = std::abs(x(r, c)) <= a ? 1.0 : 0.0;
    }
  }
  return mask;
}

std::vector<Matrix> record_layer_inputs(const DenseEncoder& encoder, const Matrix& batch) {
  std::vector<Matrix> inputs;
  if (batch.cols() != encoder.input_dim()) {
    throw ShapeError("calibration batch has " + std::to_string(batch.cols()) +
                     " columns, encoder expects " + std::to_string(encoder.input_dim()));
  }
  Matrix h = batch;
  for (const auto& l : encoder.layers()) {
    inputs.push_back(h);
    Matrix z = h * l.weight.value().transpose();
    z.rowwise() += l.bias.value().row(0);
    if (l.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return inputs;
}

std::vector<LayerQuantParams> weight_params(const DenseEncoder& encoder, const QuantScheme& scheme) {
  scheme.validate();
  std::vector<LayerQuantParams> out;
  for (const auto& l : encoder.layers()) {
    out.push_back({fit_scale(l.weight.value(), scheme.bits, 0), std::nullopt});
  }
  return out;
}

std::vector<LayerQuantParams> calibrate_static(const DenseEncoder& encoder, const Matrix& rgb,
                                               const Matrix& nonrgb, const QuantScheme& scheme) {
  if (rgb.rows() == 0 || nonrgb.rows() == 0) throw ContractError("empty calibration set");
  if (rgb.rows() != nonrgb.rows()) throw ContractError("calibration modalities differ in size");
  auto params = weight_params(encoder, scheme);
  const auto in_rgb = record_layer_inputs(encoder, rgb);
  const auto in_nonrgb = record_layer_inputs(encoder, nonrgb);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double m = std::max(in_rgb[k].cwiseAbs().maxCoeff(), in_nonrgb[k].cwiseAbs().maxCoeff());
    params[k].activation =
        QuantParams::from_alpha({max_or_unit(m, "activation", static_cast<Index>(k))}, scheme.bits);
  }
  return params;
}

namespace {
double batch_alpha(const Matrix& x) {
  const double m = x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
  return m > 0.0 ? m : 1.0;
}

QuantParams float32_scales(const QuantParams& p, int bits) {
  std::vector<double> s;
  s.reserve(p.scale.size());
  for (double v : p.scale) s.push_back(static_cast<double>(static_cast<float>(v)));
  return QuantParams::from_scale(std::move(s), bits, p.axis);
}
}  // namespace

QuantizedEncoder::QuantizedEncoder(QuantScheme scheme, std::vector<QuantizedLayer> layers)
    : scheme_(scheme), layers_(std::move(layers)) {
  scheme_.validate();
  if (layers_.empty()) throw ContractError("quantized encoder needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (scheme_.mode == QuantMode::kStatic && !l.activation_alpha) {
      throw ContractError("static quantized layer " + std::to_string(k) + " lacks an activation scale");
    }
    if (k + 1 < layers_.size() && layers_[k + 1].weight_q.cols() != l.weight_q.rows()) {
      throw ShapeError("quantized layer " + std::to_string(k) + " does not chain");
    }
    dequantized_weights_.push_back(dequantize(l.weight_q, l.weight));
  }
}

Matrix QuantizedEncoder::forward(const Matrix& batch) const {
  if (batch.cols() != input_dim()) {
    throw ShapeError("quantized encoder input has " + std::to_string(batch.cols()) +
                     " columns, expected " + std::to_string(input_dim()));
  }
  Matrix h = batch;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    const double alpha = scheme_.mode == QuantMode::kStatic ? *l.activation_alpha : batch_alpha(h);
    const auto ap = QuantParams::from_alpha({alpha}, scheme_.bits);
    Matrix z = fake_quantize(h, ap, scheme_.bits) * dequantized_weights_[k].transpose();
    z.rowwise() += l.bias.row(0);
    if (l.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

DenseEncoder QuantizedEncoder::dequantized() const {
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layers.push_back({Tensor(dequantized_weights_[k]), Tensor(layers_[k].bias), layers_[k].activation});
  }
  return DenseEncoder(std::move(layers));
}

QuantizedEncoder ptq(const DenseEncoder& encoder, const std::vector<LayerQuantParams>& params,
                     const QuantScheme& scheme) {
  scheme.validate();
  if (params.size() != encoder.num_layers()) {
    throw ContractError("ptq: " + std::to_string(params.size()) + " parameter sets for " +
                        std::to_string(encoder.num_layers()) + " layers");
  }
  std::vector<QuantizedLayer> layers;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& l = encoder.layers()[k];
    QuantizedLayer q;
    q.weight = float32_scales(params[k].weight, scheme.bits);
    q.weight_q = quantize(l.weight.value(), q.weight, scheme.bits);
    q.bias = l.bias.value().cast<float>().cast<double>();
    q.activation = l.activation;
    if (scheme.mode == QuantMode::kStatic) {
      if (!params[k].activation) {
        throw ContractError("ptq: layer " + std::to_string(k) + " has no activation scale");
      }
      q.activation_alpha = float32_scales(*params[k].activation, scheme.bits).alpha[0];
    }
    layers.push_back(std::move(q));
  }
  return QuantizedEncoder(scheme, std::move(layers));
}

FakeQuantLayer::FakeQuantLayer(DenseLayer layer, QuantScheme scheme,
                               std::optional<double> activation_alpha)
    : layer_(std::move(layer)), scheme_(scheme), activation_alpha_(activation_alpha) {
  scheme_.validate();
  if (scheme_.mode == QuantMode::kStatic && !activation_alpha_) {
    throw ContractError("static fake-quant layer needs a calibrated activation alpha");
  }
}

Tensor FakeQuantLayer::forward(const Tensor& input, bool track_input) {
  Tensor x = input.requires_grad() || !track_input ? input : Tensor(input.value(), true);
  last_alpha_ = scheme_.mode == QuantMode::kStatic ? *activation_alpha_ : batch_alpha(x.value());
  const auto ap = QuantParams::from_alpha({last_alpha_}, scheme_.bits);
  Tensor xq = straight_through(x, fake_quantize(x.value(), ap, scheme_.bits), in_range_mask(x.value(), ap));

  const Matrix& w = layer_.weight.value();
  const auto wp = fit_scale(w, scheme_.bits, 0);
  Tensor wq = straight_through(layer_.weight, fake_quantize(w, wp, scheme_.bits), in_range_mask(w, wp));

  Tensor z = add_row_broadcast(matmul_transposed(xq, wq), layer_.bias);
  if (layer_.activation == Activation::kRelu) z = relu(z);
  last_input_ = x;
  last_output_ = z;
  return z;
}

Matrix FakeQuantLayer::backward(const Matrix& upstream) {
  if (!last_output_.defined()) throw ContractError("fake-quant backward called before forward");
  if (!last_input_.is_leaf() || !last_input_.requires_grad()) {
    throw ContractError("fake-quant backward: input belongs to a larger graph; backpropagate from the loss");
  }
  last_input_.clear_grad();
  edgedistill::backward(last_output_, upstream);
  return last_input_.grad();
}

FakeQuantEncoder::FakeQuantEncoder(const DenseEncoder& encoder, QuantScheme scheme,
                                   const std::vector<LayerQuantParams>& params)
    : scheme_(scheme) {
  if (scheme.mode == QuantMode::kStatic && params.size() != encoder.num_layers()) {
    throw ContractError("fake-quant encoder: parameters do not cover every layer");
  }
  for (std::size_t k = 0; k < encoder.num_layers(); ++k) {
    std::optional<double> alpha;
    if (scheme.mode == QuantMode::kStatic) {
      if (!params[k].activation) throw ContractError("fake-quant encoder: missing activation scale");
      alpha = params[k].activation->alpha[0];
    }
    layers_.emplace_back(encoder.layers()[k], scheme, alpha);
  }
}

Tensor FakeQuantEncoder::forward(const Tensor& batch) {
  Tensor h = batch;
  for (auto& l : layers_) h = l.forward(h, false);
  return h;
}

Matrix FakeQuantEncoder::evaluate(const Matrix& batch) const {
  Matrix h = batch;
  for (const auto& fl : layers_) {
    const auto& l = fl.layer();
    const double alpha = fl.activation_alpha() ? *fl.activation_alpha() : batch_alpha(h);
    const auto ap = QuantParams::from_alpha({alpha}, scheme_.bits);
    const auto wp = fit_scale(l.weight.value(), scheme_.bits, 0);
    Matrix z = fake_quantize(h, ap, scheme_.bits) *
               fake_quantize(l.weight.value(), wp, scheme_.bits).transpose();
    z.rowwise() += l.bias.value().row(0);
    if (l.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

int element_bytes(int bits) {
  (void)qmax_for_bits(bits);
  if (bits <= 8) return 1;
  if (bits <= 16) return 2;
  return 4;
}

std::uint64_t model_size(const DenseEncoder& encoder) {
  std::uint64_t bytes = 8;  // magic + layer count
  for (const auto& l : encoder.layers()) {
    const auto out = static_cast<std::uint64_t>(l.out_features());
    const auto in = static_cast<std::uint64_t>(l.in_features());
    bytes += 9 + 4 * out * in + 4 * out;
  }
  return bytes;
}

std::uint64_t model_size(const DenseEncoder& encoder, const QuantScheme& scheme) {
  const auto eb = static_cast<std::uint64_t>(element_bytes(scheme.bits));
  std::uint64_t bytes = 12;  // magic, four tag bytes, layer count
  for (const auto& l : encoder.layers()) {
    const auto out = static_cast<std::uint64_t>(l.out_features());
    const auto in = static_cast<std::uint64_t>(l.in_features());
    bytes += 13 + eb * out * in + 4 * out + 4 * out;
  }
  return bytes;
}

}  // namespace edgedistill
