#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "doctest.h"
#include "dve/error.hpp"
#include "dve/half.hpp"
#include "dve/storage.hpp"
#include "oracles.hpp"

using namespace dve;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected dve::Error");
  return ErrorCode::InvalidArgument;
}

// Values that survive the f32 round trip so bit-exactness is meaningful.
DenseEmbeddingMap f32_map(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  auto m = testing::random_map(rng, h, w, d);
  for (double& v : m.data()) v = static_cast<float>(v);
  return m;
}

void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / ("dve_storage_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("DVEM round trip is bit exact at f32 and re-encodes byte for byte") {
  std::mt19937_64 rng(50);
  const auto m = f32_map(rng, 3, 4, 8);
  const auto bytes = encode_volume(m, Dtype::f32);
  CHECK(bytes.size() == 24 + 3 * 4 * 8 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DVEM");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 3);
  const auto back = decode_volume(bytes);
  CHECK(back == m);
  CHECK(encode_volume(back, Dtype::f32) == bytes);

  // little-endian payload: first value at byte 24
  const float first = static_cast<float>(m.data()[0]);
  std::uint32_t bits = std::bit_cast<std::uint32_t>(first);
  for (int i = 0; i < 4; ++i) CHECK(bytes[24 + i] == static_cast<std::uint8_t>(bits >> (8 * i)));
}

TEST_CASE("DVEM f16 storage") {
  const DenseEmbeddingMap m(1, 1, 3, {1.0, -0.5, 0.1});
  const auto bytes = encode_volume(m, Dtype::f16);
  CHECK(bytes[20] == 1);
  const auto back = decode_volume(bytes);
  CHECK(back.data()[0] == 1.0);
  CHECK(back.data()[1] == -0.5);
  CHECK(back.data()[2] == static_cast<double>(half_to_float(double_to_half(0.1))));
  CHECK(encode_volume(back, Dtype::f16) == bytes);
}

TEST_CASE("DVEM corruption") {
  std::mt19937_64 rng(51);
  const auto good = encode_volume(f32_map(rng, 2, 2, 2), Dtype::f32);
  auto bad = good;
  bad[3] = 'X';
  CHECK(code_of([&] { decode_volume(bad); }) == ErrorCode::BadMagic);
  bad = good;
  bad[4] = 2;
  CHECK(code_of([&] { decode_volume(bad); }) == ErrorCode::BadVersion);
  bad = good;
  bad[20] = 7;
  CHECK(code_of([&] { decode_volume(bad); }) == ErrorCode::UnknownDtype);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{23}, good.size() - 1}) {
    const Bytes t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    const auto c = code_of([&] { decode_volume(t); });
    CHECK((c == ErrorCode::TruncatedPayload || (cut < 4 && c == ErrorCode::BadMagic)));
  }
  bad = good;
  bad.push_back(0);
  CHECK(code_of([&] { decode_volume(bad); }) == ErrorCode::ShapeMismatch);

  Bytes empty{'D', 'V', 'E', 'M'};
  put_u32(empty, 1);
  put_u32(empty, 0);
  put_u32(empty, 3);
  put_u32(empty, 3);
  empty.insert(empty.end(), {0, 0, 0, 0});
  CHECK(code_of([&] { decode_volume(empty); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("SMSK examples") {
  Bytes b{'S', 'M', 'S', 'K'};
  put_u32(b, 1);
  put_u32(b, 2);
  put_u32(b, 2);
  for (std::uint16_t id : {1, 1, 0, 2}) {
    b.push_back(static_cast<std::uint8_t>(id));
    b.push_back(static_cast<std::uint8_t>(id >> 8));
  }
  const auto m = decode_mask_map(b);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(1, 0) == 0);
  CHECK(m.at(1, 1) == 2);
  CHECK(encode_mask_map(m) == b);

  const Bytes header(b.begin(), b.begin() + 16);
  CHECK(code_of([&] { decode_mask_map(header); }) == ErrorCode::TruncatedPayload);

  const SegmentMaskMap zeros(3, 2, std::vector<std::uint16_t>(6, 0));
  CHECK(decode_mask_map(encode_mask_map(zeros)).ids == zeros.ids);

  auto wrong = b;
  wrong[0] = 'X';
  CHECK(code_of([&] { decode_mask_map(wrong); }) == ErrorCode::BadMagic);
}

TEST_CASE("LMAP round trip keeps ignore labels") {
  const LabelMap l(2, 3, {0, 1, kIgnoreLabel, 7, 7, 2});
  const auto b = encode_label_map(l);
  CHECK(decode_label_map(b) == l);
  CHECK(encode_label_map(decode_label_map(b)) == b);
  const Bytes cut(b.begin(), b.end() - 1);
  CHECK(code_of([&] { decode_label_map(cut); }) == ErrorCode::TruncatedPayload);
}

TEST_CASE("SEGE examples") {
  std::mt19937_64 rng(52);
  auto vec = [&] {
    auto v = testing::random_vector(rng, 5);
    for (double& x : v) x = static_cast<float>(x);
    return EmbeddingVector(v);
  };
  std::vector<SegmentRecord> recs{{0, std::nullopt, vec(), std::nullopt}, {1, 3, vec(), std::nullopt}};
  const auto b = encode_segment_records(recs);
  const auto back = decode_segment_records(b);
  REQUIRE(back.size() == 2);
  CHECK(back[0].is_global());
  CHECK(!back[0].class_id.has_value());
  CHECK(back[1].class_id == 3);
  CHECK(back[1].raw_embedding == recs[1].raw_embedding);
  CHECK(encode_segment_records(back) == b);

  std::vector<SegmentRecord> dup{{5, std::nullopt, vec(), std::nullopt}, {5, std::nullopt, vec(), std::nullopt}};
  Bytes dup_bytes{'S', 'E', 'G', 'E'};
  put_u32(dup_bytes, 1);
  put_u32(dup_bytes, 2);
  put_u32(dup_bytes, 5);
  const auto one = encode_segment_records(std::span(dup).first(1));
  for (int i = 0; i < 2; ++i) dup_bytes.insert(dup_bytes.end(), one.begin() + 16, one.end());
  CHECK(code_of([&] { decode_segment_records(dup_bytes); }) == ErrorCode::DuplicateSegment);

  Bytes none{'S', 'E', 'G', 'E'};
  put_u32(none, 1);
  put_u32(none, 0);
  put_u32(none, 5);
  CHECK(decode_segment_records(none).empty());

  const Bytes cut(b.begin(), b.end() - 2);
  CHECK(code_of([&] { decode_segment_records(cut); }) == ErrorCode::TruncatedPayload);
  auto magic = b;
  magic[0] = 'Z';
  CHECK(code_of([&] { decode_segment_records(magic); }) == ErrorCode::BadMagic);
}

TEST_CASE("DVE3 round trip") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> coord(-3, 3);
  MapBuilder b(0.25, 6);
  for (int i = 0; i < 100; ++i) b.insert({coord(rng), coord(rng), coord(rng)}, testing::random_vector(rng, 6));
  const auto frozen = map_freeze(b).map;
  const auto bytes = encode_map3d(frozen);
  const auto back = decode_map3d(bytes);
  CHECK(back.size() == frozen.size());
  CHECK(back.cell_size() == 0.25);
  CHECK(encode_map3d(back) == bytes);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.cells()[i].key == frozen.cells()[i].key);
    CHECK(back.cells()[i].count == frozen.cells()[i].count);
    for (std::size_t k = 0; k < 6; ++k)
      CHECK(back.cells()[i].mean[k] == static_cast<double>(static_cast<float>(frozen.cells()[i].mean[k])));
  }

  const Bytes cut(bytes.begin(), bytes.end() - 4);
  CHECK(code_of([&] { decode_map3d(cut); }) == ErrorCode::TruncatedPayload);
  const std::size_t rec = 16 + 6 * 4;
  Bytes dup(bytes.begin(), bytes.begin() + 24 + static_cast<std::ptrdiff_t>(rec));
  dup.insert(dup.end(), bytes.begin() + 24, bytes.begin() + 24 + static_cast<std::ptrdiff_t>(rec));
  for (int i = 0; i < 8; ++i) dup[16 + i] = i == 0 ? 2 : 0;
  CHECK(code_of([&] { decode_map3d(dup); }) == ErrorCode::DuplicateSegment);
}

TEST_CASE("half conversion round-trips every finite half and rounds to nearest even") {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto bits = static_cast<std::uint16_t>(h);
    const float f = half_to_float(bits);
    if (std::isnan(f)) continue;
    CHECK(float_to_half(f) == bits);
    CHECK(double_to_half(f) == bits);
  }
  CHECK(float_to_half(1.0f) == 0x3C00);
  CHECK(float_to_half(65504.0f) == 0x7BFF);
  CHECK(float_to_half(65520.0f) == 0x7C00);
  CHECK(float_to_half(-0.0f) == 0x8000);
  CHECK(std::isnan(half_to_float(float_to_half(std::nanf("")))));
  // halfway between 1 and the next half (2^-10 apart): ties go to the even mantissa
  CHECK(float_to_half(1.0f + 0x1p-11f) == 0x3C00);
  CHECK(float_to_half(1.0f + 3 * 0x1p-11f) == 0x3C02);

  std::mt19937_64 rng(54);
  std::uniform_real_distribution<double> mag(-20, 16);
  for (int i = 0; i < 100000; ++i) {
    const double x = std::ldexp(1.0, 0) * std::exp2(mag(rng)) * (i % 2 ? 1 : -1);
    const auto h = double_to_half(x);
    const double got = half_to_float(h);
    if (std::isinf(got)) continue;
    const double up = half_to_float(static_cast<std::uint16_t>(h + 1));
    const double down = (h & 0x7FFF) ? static_cast<double>(half_to_float(static_cast<std::uint16_t>(h - 1))) : got;
    CHECK(std::abs(got - x) <= std::abs(up - x));
    CHECK(std::abs(got - x) <= std::abs(down - x));
  }
}

TEST_CASE("similarity and depth PGM") {
  const std::vector<double> s{-1.0, 0.0, 1.0, 0.5};
  const auto pgm = encode_similarity_pgm(2, 2, s);
  const std::string head = "P5\n2 2\n255\n";
  REQUIRE(pgm.size() == head.size() + 4);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(head.size())) == head);
  CHECK(pgm[head.size()] == 0);
  CHECK(pgm[head.size() + 1] == 128);
  CHECK(pgm[head.size() + 2] == 255);
  CHECK(pgm[head.size() + 3] == 191);

  const DepthImage d{2, 3, {0, 1, 1000, 65535, 256, 7}};
  const auto back = decode_depth_pgm(encode_depth_pgm(d));
  CHECK(back.depth == d.depth);
  CHECK(back.width == 3);
}

TEST_CASE("embedding bank JSON") {
  const auto bank = parse_embedding_bank(R"({"dim": 2, "entries": [{"name": "chair", "vector": [1, 0]}]})");
  CHECK(bank.dim == 2);
  REQUIRE(bank.entries.size() == 1);
  CHECK(bank.entries[0].name == "chair");
  CHECK(bank.find("chair").size() == 1);
  CHECK(bank.find("table").empty());

  CHECK(code_of([] { parse_embedding_bank(R"({"dim": 2, "entries": [{"name": "x", "vector": [1, 0, 0]}]})"); }) ==
        ErrorCode::DimMismatch);
  CHECK(parse_embedding_bank(R"({"dim": 4, "entries": []})").entries.empty());
  CHECK(code_of([] { parse_embedding_bank("{not json"); }) == ErrorCode::BadSchema);
  CHECK(code_of([] { parse_embedding_bank(R"({"entries": []})"); }) == ErrorCode::BadSchema);

  const auto multi = parse_embedding_bank(
      R"({"dim": 2, "entries": [{"name": "a", "vector": [1, 0]}, {"name": "a", "vector": [0.25, 1e-3]}]})");
  CHECK(multi.find("a").size() == 2);
  const auto again = parse_embedding_bank(dump_embedding_bank(multi));
  CHECK(again.entries[1].vector == multi.entries[1].vector);
}

TEST_CASE("probe and student JSON round trip exactly") {
  std::mt19937_64 rng(55);
  ProbeWeights w{Matrix(3, 4), testing::random_vector(rng, 3)};
  w.weight.data = testing::random_vector(rng, 12);
  const auto pw = parse_probe(dump_probe(w));
  CHECK(pw.weight == w.weight);
  CHECK(pw.bias == w.bias);

  const std::vector<std::size_t> dims{4, 5, 3};
  const auto s = init_student(dims, 2);
  const auto ps = parse_student(dump_student(s));
  REQUIRE(ps.layers.size() == 2);
  CHECK(ps.layers[1].weight == s.layers[1].weight);
  CHECK(code_of([] { parse_probe(R"({"classes": 2, "dim": 2, "weight": [1], "bias": [0, 0]})"); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("files, manifests, and describe_file") {
  const auto dir = temp_dir();
  std::mt19937_64 rng(56);
  const auto m = f32_map(rng, 2, 3, 4);
  write_volume(m, Dtype::f32, dir / "a.dvem");
  CHECK(read_volume(dir / "a.dvem") == m);
  write_label_map(LabelMap(2, 3, std::uint16_t{1}), dir / "a.lmap");
  {
    std::ofstream(dir / "probe.json") << R"([{"embedding_map": "a.dvem", "labels": "a.lmap"}])";
  }
  const auto entries = load_probe_manifest(dir / "probe.json");
  REQUIRE(entries.size() == 1);
  CHECK(read_volume(entries[0].embedding_map) == m);

  const auto info = describe_file(dir / "a.dvem");
  CHECK(info == describe_file(dir / "a.dvem"));
  CHECK(info.find("format: DVEM") != std::string::npos);
  CHECK(info.find("dim: 4") != std::string::npos);
  CHECK(describe_file(dir / "a.lmap").find("format: LMAP") != std::string::npos);

  CHECK(code_of([&] { read_volume(dir / "missing.dvem"); }) == ErrorCode::Io);
  fs::remove_all(dir);
}
