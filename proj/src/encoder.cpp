#include "edgedistill/encoder.hpp"

#include "edgedistill/errors.hpp"

#include <cmath>
#include <string>

namespace edgedistill {

DenseEncoder::DenseEncoder(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  validate();
}

DenseEncoder::DenseEncoder(const DenseEncoder& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) {
    layers_.push_back({l.weight.clone(), l.bias.clone(), l.activation});
  }
}

DenseEncoder& DenseEncoder::operator=(const DenseEncoder& other) {
  if (this != &other) {
    DenseEncoder copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void DenseEncoder::validate() const {
  if (layers_.empty()) throw ContractError("encoder needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.bias.rows() != 1 || l.bias.cols() != l.out_features()) {
      throw ShapeError("layer " + std::to_string(k) + ": bias does not match weight rows");
    }
    if (k + 1 < layers_.size() && layers_[k + 1].in_features() != l.out_features()) {
      throw ShapeError("layer " + std::to_string(k) + " output " +
                       std::to_string(l.out_features()) + " does not chain into layer " +
                       std::to_string(k + 1) + " input " +
                       std::to_string(layers_[k + 1].in_features()));
    }
  }
  if (layers_.back().activation != Activation::kIdentity) {
    throw ContractError("final encoder layer must use the identity activation");
  }
}

DenseEncoder DenseEncoder::random(std::span<const Index> dims, Rng& rng) {
  if (dims.size() < 2) throw ContractError("encoder dims need at least input and output");
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const Index in = dims[k], out = dims[k + 1];
    if (in <= 0 || out <= 0) throw ContractError("encoder dims must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(out, in);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    const bool last = k + 2 == dims.size();
    layers.push_back({Tensor(std::move(w), true), Tensor(Matrix::Zero(1, out), true),
                      last ? Activation::kIdentity : Activation::kRelu});
  }
  return DenseEncoder(std::move(layers));
}

Index DenseEncoder::input_dim() const { return layers_.front().in_features(); }
Index DenseEncoder::output_dim() const { return layers_.back().out_features(); }

Index DenseEncoder::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor> DenseEncoder::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void DenseEncoder::set_requires_grad(bool flag) {
  for (auto& l : layers_) {
    l.weight.set_requires_grad(flag);
    l.bias.set_requires_grad(flag);
  }
}

namespace {
void check_input(const DenseEncoder& encoder, Index rows, Index cols) {
  if (encoder.num_layers() == 0) throw ContractError("forward through an empty encoder");
  if (cols != encoder.input_dim()) {
    throw ShapeError("encoder input [" + std::to_string(rows) + "x" + std::to_string(cols) +
                     "] does not match first layer weight [" +
                     std::to_string(encoder.layers().front().out_features()) + "x" +
                     std::to_string(encoder.input_dim()) + "]");
  }
}
}  // namespace

Tensor forward(const DenseEncoder& encoder, const Tensor& batch) {
  check_input(encoder, batch.rows(), batch.cols());
  Tensor h = batch;
  for (const auto& l : encoder.layers()) {
    h = add_row_broadcast(matmul_transposed(h, l.weight), l.bias);
    if (l.activation == Activation::kRelu) h = relu(h);
  }
  return h;
}

Matrix forward(const DenseEncoder& encoder, const Matrix& batch) {
  check_input(encoder, batch.rows(), batch.cols());
  Matrix h = batch;
  for (const auto& l : encoder.layers()) {
    Matrix z = h * l.weight.value().transpose();
    z.rowwise() += l.bias.value().row(0);
    if (l.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

void round_to_float(DenseEncoder& encoder) {
  for (auto& l : encoder.layers()) {
    for (Tensor* t : {&l.weight, &l.bias}) {
      Matrix& v = t->mutable_value();
      v = v.cast<float>().cast<double>();
    }
  }
}

}  // namespace edgedistill
