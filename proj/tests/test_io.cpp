#include "edgedistill/errors.hpp"
#include "edgedistill/io.hpp"
#include "edgedistill/quant.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>

using namespace edgedistill;
using namespace edgedistill::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = EDGEDISTILL_GOLDEN_DIR;

// float32-representable values.
Matrix random_f32(Rng& rng, Index r, Index c) {
  Matrix m = random_matrix(rng, r, c, -10, 10);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(m.data()[i]);
  return m;
}

DenseEncoder random_f32_encoder(Rng& rng, std::vector<Index> dims) {
  DenseEncoder e = DenseEncoder::random(dims, rng);
  for (auto& l : e.layers()) l.bias.mutable_value() = random_matrix(rng, 1, l.bias.cols());
  round_to_float(e);
  return e;
}

template <typename Fn>
std::uint64_t format_error_offset(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_CASE("golden embedding file") {
  const Bytes bytes = read_file(kGolden / "embeddings_2x3.eve");
  const auto f = decode_embeddings(bytes);
  Matrix expect(2, 3);
  expect << 1.0, -2.5, 0.125, 3.0, -0.5, 1024.0;
  CHECK(f.rows == expect);
  CHECK(f.ids == std::vector<std::string>{"a", "bc"});
  CHECK(encode_embeddings(f) == bytes);
}

TEST_CASE("golden dataset file") {
  const Bytes bytes = read_file(kGolden / "dataset_2x2.evd");
  const auto d = decode_dataset(bytes);
  Matrix rgb(2, 2), nonrgb(2, 2);
  rgb << 0.5, -1.0, 2.0, 0.25;
  nonrgb << -0.75, 1.5, 0.0, -3.0;
  CHECK(d.rgb == rgb);
  CHECK(d.nonrgb == nonrgb);
  CHECK(d.labels == std::vector<std::int32_t>{1, 0});
  CHECK(encode_dataset(d) == bytes);
}

TEST_CASE("golden float checkpoint") {
  const Bytes bytes = read_file(kGolden / "dense_2x3.evf");
  const auto e = decode_float_checkpoint(bytes);
  REQUIRE(e.num_layers() == 1);
  Matrix w(2, 3), b(1, 2);
  w << 1.0, 0.0, -1.0, 0.5, 2.0, -0.25;
  b << 0.125, -8.0;
  CHECK(e.layers()[0].weight.value() == w);
  CHECK(e.layers()[0].bias.value() == b);
  CHECK(e.layers()[0].activation == Activation::kIdentity);
  CHECK(encode_float_checkpoint(e) == bytes);
  CHECK(model_size(e) == bytes.size());
}

TEST_CASE("golden int8 checkpoint") {
  const Bytes bytes = read_file(kGolden / "int8_2x2.evq");
  const auto q = decode_quantized_checkpoint(bytes);
  CHECK(q.scheme().bits == 8);
  CHECK(q.scheme().mode == QuantMode::kStatic);
  REQUIRE(q.layers().size() == 1);
  const auto& l = q.layers()[0];
  CHECK(*l.activation_alpha == 1.0);
  CHECK(l.weight.scale == std::vector<double>{127.0, 63.5});
  CHECK(l.weight.alpha == std::vector<double>{1.0, 2.0});
  CHECK(l.weight_q(0, 0) == 1);
  CHECK(l.weight_q(0, 1) == -2);
  CHECK(l.weight_q(1, 0) == 127);
  CHECK(l.weight_q(1, 1) == -127);
  CHECK(encode_quantized_checkpoint(q) == bytes);
  // x = [0.5, 0.25] -> xq = [64, 32] / 127; row 0: (64 - 64) / 127^2; row 1: 2 * (64 - 32) / 127.
  Matrix x(1, 2);
  x << 0.5, 0.25;
  const Matrix y = q.forward(x);
  CHECK(y(0, 0) == doctest::Approx(0.5 + (64.0 * 1 - 32.0 * 2) / (127.0 * 127.0)).epsilon(1e-14));
  CHECK(y(0, 1) == doctest::Approx(-0.25 + (64.0 * 127 - 32.0 * 127) / (127.0 * 63.5)).epsilon(1e-14));
}

TEST_CASE("round trips on random payloads") {
  Rng rng(401);
  for (int t = 0; t < 20; ++t) {
    EmbeddingFile f{random_f32(rng, 1 + rng.below(9), 1 + rng.below(12)), {}};
    CHECK(decode_embeddings(encode_embeddings(f)).rows == f.rows);
    for (Index i = 0; i < f.rows.rows(); ++i) f.ids.push_back("id-" + std::to_string(rng.below(1000)));
    const auto g = decode_embeddings(encode_embeddings(f));
    CHECK(g.rows == f.rows);
    CHECK(g.ids == f.ids);

    PairedDataset d{random_f32(rng, 5, 7), random_f32(rng, 5, 7), {}};
    CHECK(decode_dataset(encode_dataset(d)).rgb == d.rgb);
    for (int i = 0; i < 5; ++i) d.labels.push_back(static_cast<std::int32_t>(rng.below(4)));
    const auto e = decode_dataset(encode_dataset(d));
    CHECK(e.nonrgb == d.nonrgb);
    CHECK(e.labels == d.labels);

    const DenseEncoder enc = random_f32_encoder(rng, {6, 9, 4});
    const Bytes fb = encode_float_checkpoint(enc);
    CHECK(encode_float_checkpoint(decode_float_checkpoint(fb)) == fb);
    CHECK(forward(decode_float_checkpoint(fb), d.rgb.leftCols(6)) == forward(enc, d.rgb.leftCols(6)));

    for (int bits : {3, 8, 12, 20}) {
      for (QuantMode mode : {QuantMode::kStatic, QuantMode::kDynamic}) {
        const QuantScheme scheme{bits, mode};
        const auto params = mode == QuantMode::kStatic
                                ? calibrate_static(enc, d.rgb.leftCols(6), d.nonrgb.leftCols(6), scheme)
                                : weight_params(enc, scheme);
        const QuantizedEncoder q = ptq(enc, params, scheme);
        const Bytes qb = encode_quantized_checkpoint(q);
        CHECK(qb.size() == model_size(enc, scheme));
        const QuantizedEncoder back = decode_quantized_checkpoint(qb);
        CHECK(encode_quantized_checkpoint(back) == qb);
        CHECK(back.forward(d.rgb.leftCols(6)) == q.forward(d.rgb.leftCols(6)));
      }
    }
  }
}

TEST_CASE("a 1x1 embedding file is header plus four bytes") {
  Matrix one(1, 1);
  one << 0.5;
  CHECK(encode_embeddings({one, {}}).size() == kEmbeddingHeaderBytes + 4);
}

TEST_CASE("corrupt inputs report the failing byte offset") {
  Bytes eve = read_file(kGolden / "embeddings_2x3.eve");
  Bytes bad = eve;
  bad[1] = 'X';
  CHECK(format_error_offset([&] { decode_embeddings(bad); }) == 0);

  // The value block is checked as a whole, so truncation points at its start.
  bad = Bytes(eve.begin(), eve.begin() + 20);
  CHECK(format_error_offset([&] { decode_embeddings(bad); }) == kEmbeddingHeaderBytes);
  bad = Bytes(eve.begin(), eve.begin() + 16 + 24 + 3);  // cut inside the id table
  CHECK(format_error_offset([&] { decode_embeddings(bad); }) == 16 + 24);

  bad = eve;
  bad.push_back(0);
  CHECK(format_error_offset([&] { decode_embeddings(bad); }) == eve.size());

  bad = eve;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + 16 + 4, &nan, 4);
  CHECK(format_error_offset([&] { decode_embeddings(bad); }) == 20);

  Bytes evq = read_file(kGolden / "int8_2x2.evq");
  bad = evq;
  bad[4] = 40;  // bits
  CHECK(format_error_offset([&] { decode_quantized_checkpoint(bad); }) == 4);
  bad = evq;
  bad[33] = 0x80;  // -128 is outside the symmetric int8 range
  CHECK(format_error_offset([&] { decode_quantized_checkpoint(bad); }) == 33);

  CHECK_THROWS_AS(decode_float_checkpoint(evq), FormatError);
  CHECK_THROWS_AS(decode_dataset(Bytes{}), FormatError);
}

TEST_CASE("file helpers prefix the path and create directories") {
  const fs::path dir = fs::temp_directory_path() / "edgedistill_io_test";
  fs::remove_all(dir);
  Rng rng(402);
  const EmbeddingFile f{random_f32(rng, 3, 4), {}};
  write_embeddings(dir / "nested" / "e.eve", f);
  CHECK(read_embeddings(dir / "nested" / "e.eve").rows == f.rows);

  write_file(dir / "bad.eve", Bytes{'N', 'O', 'P', 'E'});
  try {
    read_embeddings(dir / "bad.eve");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.eve") != std::string::npos);
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(read_file(dir / "missing.eve"), DataError);

  write_labels(dir / "l.txt", {"alpha", "beta gamma"});
  CHECK(read_labels(dir / "l.txt") == std::vector<std::string>{"alpha", "beta gamma"});
  fs::remove_all(dir);
}
