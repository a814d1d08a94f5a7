#include "edgedistill/io.hpp"

#include "edgedistill/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace edgedistill {
namespace {

class Writer {
 public:
  void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int k = 0; k < 2; ++k) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void str(const std::string& s) {
    u32(checked_u32(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void matrix(const Matrix& m) {
    for (Index i = 0; i < m.size(); ++i) f32(m.data()[i]);
  }

  static std::uint32_t checked_u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ContractError("value exceeds u32 range");
    return static_cast<std::uint32_t>(v);
  }

  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void magic(const char (&tag)[5]) {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), tag, 4) != 0) {
      throw FormatError(std::string("bad magic, expected ") + tag, 0);
    }
    pos_ = 4;
  }
  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(k)]) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  double f32() {
    const std::size_t at = pos_;
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v)) throw FormatError("non-finite float value", at);
    return static_cast<double>(v);
  }
  std::string str() {
    const std::uint32_t len = u32();
    need(len, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  Matrix matrix(Index rows, Index cols) {
    need(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 4, "float payload");
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = f32();
    return m;
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after payload", pos_);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Index positive_dim(std::uint32_t v, const char* what, std::size_t at) {
  if (v == 0) throw FormatError(std::string(what) + " must be positive", at);
  return static_cast<Index>(v);
}

Activation activation_tag(std::uint8_t v, std::size_t at) {
  if (v > 1) throw FormatError("unknown activation tag " + std::to_string(v), at);
  return static_cast<Activation>(v);
}

}  // namespace

Bytes encode_embeddings(const EmbeddingFile& file) {
  if (file.rows.rows() == 0 || file.rows.cols() == 0) throw ContractError("embedding file needs N, D > 0");
  if (!file.ids.empty() && file.ids.size() != static_cast<std::size_t>(file.rows.rows())) {
    throw ContractError("embedding id table must have one entry per row");
  }
  Writer w;
  w.magic("EVE1");
  w.u32(Writer::checked_u32(static_cast<std::size_t>(file.rows.rows())));
  w.u32(Writer::checked_u32(static_cast<std::size_t>(file.rows.cols())));
  w.u32(file.ids.empty() ? 0u : 1u);
  w.matrix(file.rows);
  for (const auto& id : file.ids) w.str(id);
  return w.take();
}

EmbeddingFile decode_embeddings(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("EVE1");
  std::size_t at = r.pos();
  const Index n = positive_dim(r.u32(), "row count", at);
  at = r.pos();
  const Index d = positive_dim(r.u32(), "dimension", at);
  at = r.pos();
  const std::uint32_t flags = r.u32();
  if (flags > 1) throw FormatError("unknown embedding flags", at);
  EmbeddingFile f;
  f.rows = r.matrix(n, d);
  if (flags & 1u) {
    for (Index i = 0; i < n; ++i) f.ids.push_back(r.str());
  }
  r.finish();
  return f;
}

Bytes encode_dataset(const PairedDataset& data) {
  if (data.rgb.rows() != data.nonrgb.rows() || data.rgb.cols() != data.nonrgb.cols()) {
    throw ContractError("dataset modalities differ in shape");
  }
  if (data.labeled() && data.labels.size() != data.size()) throw ContractError("one label per pair required");
  if (data.rgb.rows() == 0 || data.rgb.cols() == 0) throw ContractError("dataset needs rows and columns");
  Writer w;
  w.magic("EVD1");
  w.u32(Writer::checked_u32(data.size()));
  w.u32(Writer::checked_u32(static_cast<std::size_t>(data.rgb.cols())));
  w.u32(data.labeled() ? 1u : 0u);
  w.matrix(data.rgb);
  w.matrix(data.nonrgb);
  for (auto y : data.labels) w.i32(y);
  return w.take();
}

PairedDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("EVD1");
  std::size_t at = r.pos();
  const Index n = positive_dim(r.u32(), "row count", at);
  at = r.pos();
  const Index in = positive_dim(r.u32(), "input dimension", at);
  at = r.pos();
  const std::uint32_t flags = r.u32();
  if (flags > 1) throw FormatError("unknown dataset flags", at);
  PairedDataset d;
  d.rgb = r.matrix(n, in);
  d.nonrgb = r.matrix(n, in);
  if (flags & 1u) {
    d.labels.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) d.labels.push_back(r.i32());
  }
  r.finish();
  return d;
}

Bytes encode_float_checkpoint(const DenseEncoder& encoder) {
  Writer w;
  w.magic("EVF1");
  w.u32(Writer::checked_u32(encoder.num_layers()));
  for (const auto& l : encoder.layers()) {
    w.u32(Writer::checked_u32(static_cast<std::size_t>(l.out_features())));
    w.u32(Writer::checked_u32(static_cast<std::size_t>(l.in_features())));
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.matrix(l.weight.value());
    w.matrix(l.bias.value());
  }
  return w.take();
}

DenseEncoder decode_float_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("EVF1");
  std::size_t at = r.pos();
  const std::uint32_t count = r.u32();
  if (count == 0) throw FormatError("checkpoint has no layers", at);
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    at = r.pos();
    const Index out = positive_dim(r.u32(), "layer output", at);
    at = r.pos();
    const Index in = positive_dim(r.u32(), "layer input", at);
    at = r.pos();
    const Activation act = activation_tag(r.u8(), at);
    Matrix w = r.matrix(out, in);
    Matrix b = r.matrix(1, out);
    layers.push_back({Tensor(std::move(w)), Tensor(std::move(b)), act});
  }
  r.finish();
  try {
    return DenseEncoder(std::move(layers));
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent layer stack: ") + e.what(), r.pos());
  }
}

Bytes encode_quantized_checkpoint(const QuantizedEncoder& encoder) {
  const auto& s = encoder.scheme();
  const int eb = element_bytes(s.bits);
  Writer w;
  w.magic("EVQ1");
  w.u8(static_cast<std::uint8_t>(s.bits));
  w.u8(1);  // weights per channel
  w.u8(0);  // activations per tensor
  w.u8(static_cast<std::uint8_t>(s.mode));
  w.u32(Writer::checked_u32(encoder.layers().size()));
  for (const auto& l : encoder.layers()) {
    w.u32(Writer::checked_u32(static_cast<std::size_t>(l.weight_q.rows())));
    w.u32(Writer::checked_u32(static_cast<std::size_t>(l.weight_q.cols())));
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.f32(l.activation_alpha ? static_cast<double>(s.qmax()) / *l.activation_alpha : 0.0);
    for (double v : l.weight.scale) w.f32(v);
    for (Index i = 0; i < l.weight_q.size(); ++i) {
      const std::int32_t q = l.weight_q.data()[i];
      if (eb == 1) {
        w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(q)));
      } else if (eb == 2) {
        w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        w.i32(q);
      }
    }
    w.matrix(l.bias);
  }
  return w.take();
}

QuantizedEncoder decode_quantized_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("EVQ1");
  std::size_t at = r.pos();
  QuantScheme scheme;
  scheme.bits = r.u8();
  if (scheme.bits < 2 || scheme.bits > 31) throw FormatError("unsupported bit-width", at);
  at = r.pos();
  if (r.u8() != 1) throw FormatError("weight granularity must be per-channel", at);
  at = r.pos();
  if (r.u8() != 0) throw FormatError("activation granularity must be per-tensor", at);
  at = r.pos();
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("unknown quantization mode", at);
  scheme.mode = static_cast<QuantMode>(mode);
  at = r.pos();
  const std::uint32_t count = r.u32();
  if (count == 0) throw FormatError("checkpoint has no layers", at);
  const int eb = element_bytes(scheme.bits);
  const std::int32_t qmax = scheme.qmax();

  std::vector<QuantizedLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    QuantizedLayer l;
    at = r.pos();
    const Index out = positive_dim(r.u32(), "layer output", at);
    at = r.pos();
    const Index in = positive_dim(r.u32(), "layer input", at);
    at = r.pos();
    l.activation = activation_tag(r.u8(), at);
    at = r.pos();
    const double act_scale = r.f32();
    if (scheme.mode == QuantMode::kStatic) {
      if (!(act_scale > 0.0)) throw FormatError("static checkpoint needs a positive activation scale", at);
      l.activation_alpha = static_cast<double>(qmax) / act_scale;
    }
    std::vector<double> scales;
    for (Index c = 0; c < out; ++c) {
      at = r.pos();
      const double s = r.f32();
      if (!(s > 0.0)) throw FormatError("weight scale must be positive", at);
      scales.push_back(s);
    }
    l.weight = QuantParams::from_scale(std::move(scales), scheme.bits, 0);
    l.weight_q.resize(out, in);
    for (Index i = 0; i < l.weight_q.size(); ++i) {
      at = r.pos();
      std::int32_t q = 0;
      if (eb == 1) {
        q = static_cast<std::int8_t>(r.u8());
      } else if (eb == 2) {
        q = static_cast<std::int16_t>(r.u16());
      } else {
        q = r.i32();
      }
      if (q < -qmax || q > qmax) throw FormatError("integer weight outside representable range", at);
      l.weight_q.data()[i] = q;
    }
    l.bias = r.matrix(1, out);
    layers.push_back(std::move(l));
  }
  r.finish();
  try {
    return QuantizedEncoder(scheme, std::move(layers));
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent layer stack: ") + e.what(), r.pos());
  }
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

namespace {
template <typename F>
auto decode_path(const std::filesystem::path& path, F&& decode) {
  const Bytes b = read_file(path);
  try {
    return decode(b);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}
}  // namespace

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  write_file(path, encode_embeddings(file));
}
EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  return decode_path(path, [](const Bytes& b) { return decode_embeddings(b); });
}
void write_dataset(const std::filesystem::path& path, const PairedDataset& data) {
  write_file(path, encode_dataset(data));
}
PairedDataset read_dataset(const std::filesystem::path& path) {
  return decode_path(path, [](const Bytes& b) { return decode_dataset(b); });
}
void write_float_checkpoint(const std::filesystem::path& path, const DenseEncoder& encoder) {
  write_file(path, encode_float_checkpoint(encoder));
}
DenseEncoder read_float_checkpoint(const std::filesystem::path& path) {
  return decode_path(path, [](const Bytes& b) { return decode_float_checkpoint(b); });
}
void write_quantized_checkpoint(const std::filesystem::path& path, const QuantizedEncoder& encoder) {
  write_file(path, encode_quantized_checkpoint(encoder));
}
QuantizedEncoder read_quantized_checkpoint(const std::filesystem::path& path) {
  return decode_path(path, [](const Bytes& b) { return decode_quantized_checkpoint(b); });
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return labels;
}

void write_labels(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : labels) out << l << '\n';
}

}  // namespace edgedistill
