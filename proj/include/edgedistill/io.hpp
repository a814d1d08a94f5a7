#pragma once

#include "edgedistill/encoder.hpp"
#include "edgedistill/quant.hpp"
#include "edgedistill/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace edgedistill {

// All binary formats are little-endian with a four-byte ASCII magic.
//
//   EVE1 embeddings : magic, u32 rows, u32 dim, u32 flags (bit 0: id table),
//                     f32[rows*dim] row-major, then per row u32 len + bytes.
//   EVD1 dataset    : magic, u32 rows, u32 input_dim, u32 flags (bit 0: labels),
//                     f32 rgb[rows*in], f32 nonrgb[rows*in], i32 labels[rows].
//   EVF1 float model: magic, u32 layers, per layer u32 out, u32 in, u8 act,
//                     f32 weight[out*in], f32 bias[out].
//   EVQ1 int model  : magic, u8 bits, u8 weight granularity (1 = per channel),
//                     u8 activation granularity (0 = per tensor), u8 mode
//                     (0 static, 1 dynamic), u32 layers, per layer u32 out,
//                     u32 in, u8 act, f32 activation scale (0 when dynamic),
//                     f32 weight scales[out], int weight[out*in] (1, 2 or 4
//                     bytes by bit-width), f32 bias[out].

using Bytes = std::vector<std::uint8_t>;

struct EmbeddingFile {
  Matrix rows;  // values are float32-representable
  std::vector<std::string> ids;  // empty or one per row
};

struct PairedDataset {
  Matrix rgb;
  Matrix nonrgb;
  std::vector<std::int32_t> labels;  // empty when unlabeled

  std::size_t size() const { return static_cast<std::size_t>(rgb.rows()); }
  bool labeled() const { return !labels.empty(); }
};

inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

Bytes encode_embeddings(const EmbeddingFile& file);
EmbeddingFile decode_embeddings(std::span<const std::uint8_t> bytes);

Bytes encode_dataset(const PairedDataset& data);
PairedDataset decode_dataset(std::span<const std::uint8_t> bytes);

Bytes encode_float_checkpoint(const DenseEncoder& encoder);
DenseEncoder decode_float_checkpoint(std::span<const std::uint8_t> bytes);

Bytes encode_quantized_checkpoint(const QuantizedEncoder& encoder);
QuantizedEncoder decode_quantized_checkpoint(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const PairedDataset& data);
PairedDataset read_dataset(const std::filesystem::path& path);
void write_float_checkpoint(const std::filesystem::path& path, const DenseEncoder& encoder);
DenseEncoder read_float_checkpoint(const std::filesystem::path& path);
void write_quantized_checkpoint(const std::filesystem::path& path, const QuantizedEncoder& encoder);
QuantizedEncoder read_quantized_checkpoint(const std::filesystem::path& path);

/// UTF-8 text, one label per line (trailing newline optional).
std::vector<std::string> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<std::string>& labels);

}  // namespace edgedistill
