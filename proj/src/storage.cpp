#include "dve/storage.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dve/error.hpp"
#include "dve/half.hpp"
#include "json.hpp"

namespace dve {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint16_t kNoClass = 0xFFFF;

class ByteWriter {
 public:
  void magic(const char (&m)[5]) { bytes_.insert(bytes_.end(), m, m + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void reserve(std::size_t n) { bytes_.reserve(n); }
  Bytes take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, const char* format) : bytes_(bytes), format_(format) {}

  void expect_magic(const char (&m)[5]) {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), m, 4) != 0) {
      throw Error(ErrorCode::BadMagic, std::string("not a ") + format_ + " file");
    }
    pos_ = 4;
  }
  void expect_version() {
    const auto v = u32();
    if (v != kVersion) throw Error(ErrorCode::BadVersion, std::string(format_) + " version " + std::to_string(v));
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  /// Payload must be exactly `count * width` bytes.
  void expect_payload(std::uint64_t count, std::uint64_t width) {
    const std::uint64_t have = remaining();
    if (width != 0 && count > have / width) {
      throw Error(ErrorCode::TruncatedPayload, std::string(format_) + " payload shorter than declared");
    }
    if (count * width != have) {
      throw Error(ErrorCode::ShapeMismatch, std::string(format_) + " has trailing bytes after the payload");
    }
  }

 private:
  std::uint64_t get(int n) {
    if (remaining() < static_cast<std::size_t>(n)) {
      throw Error(ErrorCode::TruncatedPayload, std::string(format_) + " ends early");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  const char* format_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw Error(ErrorCode::InvalidArgument, std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

float to_f32(double v) {
  const auto f = static_cast<float>(v);
  if (!std::isfinite(f)) throw Error(ErrorCode::NonFinite, "value not representable as 32-bit float");
  return f;
}

Bytes encode_u16_grid(const char (&magic)[5], std::size_t h, std::size_t w, std::span<const std::uint16_t> v) {
  ByteWriter out;
  out.reserve(16 + 2 * v.size());
  out.magic(magic);
  out.u32(kVersion);
  out.u32(checked_u32(h, "height"));
  out.u32(checked_u32(w, "width"));
  for (auto x : v) out.u16(x);
  return out.take();
}

std::vector<std::uint16_t> decode_u16_grid(ByteReader& in, std::size_t& h, std::size_t& w) {
  in.expect_version();
  h = in.u32();
  w = in.u32();
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w;
  in.expect_payload(n, 2);
  std::vector<std::uint16_t> v(n);
  for (auto& x : v) x = in.u16();
  return v;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSchema, std::string(what) + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<double> number_array(const json& j, const char* what) {
  if (!j.is_array()) throw Error(ErrorCode::BadSchema, std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::BadSchema, std::string(what) + " must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::BadSchema, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::BadSchema, std::string("field '") + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

json manifest_array(const fs::path& path) {
  auto j = parse_json(read_text(path), "manifest");
  if (!j.is_array()) throw Error(ErrorCode::BadSchema, "manifest must be a JSON array");
  return j;
}

}  // namespace

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// DVEM

Bytes encode_volume(const DenseEmbeddingMap& map, Dtype dtype) {
  if (map.pixels() * map.dim() == 0) throw Error(ErrorCode::InvalidArgument, "volume must be non-empty");
  if (dtype != Dtype::f32 && dtype != Dtype::f16) throw Error(ErrorCode::UnknownDtype, "unsupported dtype");
  ByteWriter out;
  const std::size_t width = dtype == Dtype::f32 ? 4 : 2;
  out.reserve(24 + width * map.data().size());
  out.magic("DVEM");
  out.u32(kVersion);
  out.u32(checked_u32(map.height(), "height"));
  out.u32(checked_u32(map.width(), "width"));
  out.u32(checked_u32(map.dim(), "dim"));
  out.u8(static_cast<std::uint8_t>(dtype));
  out.u8(0);
  out.u8(0);
  out.u8(0);
  for (double v : map.data()) {
    if (dtype == Dtype::f32) {
      out.f32(to_f32(v));
    } else {
      out.u16(double_to_half(v));
    }
  }
  return out.take();
}

DenseEmbeddingMap decode_volume(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "DVEM");
  in.expect_magic("DVEM");
  in.expect_version();
  const std::size_t h = in.u32(), w = in.u32(), d = in.u32();
  const auto dtype = in.u8();
  in.u8();
  in.u8();
  in.u8();
  if (dtype > 1) throw Error(ErrorCode::UnknownDtype, "DVEM dtype " + std::to_string(dtype));
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w * d;
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "DVEM declares an empty volume");
  in.expect_payload(n, dtype == 0 ? 4 : 2);
  std::vector<double> data(n);
  for (auto& v : data) v = dtype == 0 ? static_cast<double>(in.f32()) : static_cast<double>(half_to_float(in.u16()));
  return DenseEmbeddingMap(h, w, d, std::move(data));
}

void write_volume(const DenseEmbeddingMap& map, Dtype dtype, const fs::path& path) {
  write_file(path, encode_volume(map, dtype));
}

DenseEmbeddingMap read_volume(const fs::path& path) { return decode_volume(read_file(path)); }

// ---------------------------------------------------------------------------
// SMSK / LMAP

Bytes encode_mask_map(const SegmentMaskMap& mask) { return encode_u16_grid("SMSK", mask.height, mask.width, mask.ids); }

SegmentMaskMap decode_mask_map(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "SMSK");
  in.expect_magic("SMSK");
  std::size_t h = 0, w = 0;
  auto ids = decode_u16_grid(in, h, w);
  return SegmentMaskMap(h, w, std::move(ids));
}

void write_mask_map(const SegmentMaskMap& mask, const fs::path& path) { write_file(path, encode_mask_map(mask)); }
SegmentMaskMap read_mask_map(const fs::path& path) { return decode_mask_map(read_file(path)); }

Bytes encode_label_map(const LabelMap& labels) {
  return encode_u16_grid("LMAP", labels.height, labels.width, labels.labels);
}

LabelMap decode_label_map(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "LMAP");
  in.expect_magic("LMAP");
  std::size_t h = 0, w = 0;
  auto labels = decode_u16_grid(in, h, w);
  return LabelMap(h, w, std::move(labels));
}

void write_label_map(const LabelMap& labels, const fs::path& path) { write_file(path, encode_label_map(labels)); }
LabelMap read_label_map(const fs::path& path) { return decode_label_map(read_file(path)); }

// ---------------------------------------------------------------------------
// SEGE

Bytes encode_segment_records(std::span<const SegmentRecord> records) {
  const std::size_t d = records.empty() ? 0 : records.front().raw_embedding.dim();
  ByteWriter out;
  out.magic("SEGE");
  out.u32(kVersion);
  out.u32(checked_u32(records.size(), "record count"));
  out.u32(checked_u32(d, "dim"));
  std::set<std::uint16_t> seen;
  for (const auto& r : records) {
    if (r.raw_embedding.dim() != d) throw Error(ErrorCode::DimMismatch, "segment records differ in D");
    if (!seen.insert(r.segment_id).second) throw Error(ErrorCode::DuplicateSegment, std::to_string(r.segment_id));
    out.u16(r.segment_id);
    out.u16(r.class_id.value_or(kNoClass));
    for (double v : r.raw_embedding.values()) out.f32(to_f32(v));
  }
  return out.take();
}

std::vector<SegmentRecord> decode_segment_records(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "SEGE");
  in.expect_magic("SEGE");
  in.expect_version();
  const std::size_t n = in.u32(), d = in.u32();
  in.expect_payload(n, 4 + 4 * static_cast<std::uint64_t>(d));
  std::vector<SegmentRecord> records;
  records.reserve(n);
  std::set<std::uint16_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    SegmentRecord r;
    r.segment_id = in.u16();
    const auto cls = in.u16();
    if (cls != kNoClass) r.class_id = cls;
    std::vector<double> v(d);
    for (auto& x : v) x = static_cast<double>(in.f32());
    r.raw_embedding = EmbeddingVector(std::move(v));
    if (!seen.insert(r.segment_id).second) throw Error(ErrorCode::DuplicateSegment, std::to_string(r.segment_id));
    if (l2_norm(r.raw_embedding.values()) < kZeroNorm) {
      throw Error(ErrorCode::ZeroVector, "raw embedding of segment " + std::to_string(r.segment_id));
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_segment_records(std::span<const SegmentRecord> records, const fs::path& path) {
  write_file(path, encode_segment_records(records));
}

std::vector<SegmentRecord> read_segment_records(const fs::path& path) {
  return decode_segment_records(read_file(path));
}

// ---------------------------------------------------------------------------
// DVE3

Bytes encode_map3d(const EmbeddingMap3D& map) {
  ByteWriter out;
  out.magic("DVE3");
  out.u32(kVersion);
  out.f32(to_f32(map.cell_size()));
  out.u32(checked_u32(map.dim(), "dim"));
  out.u64(map.size());
  for (const auto& c : map.cells()) {
    out.i32(c.key.x);
    out.i32(c.key.y);
    out.i32(c.key.z);
    out.u32(c.count);
    for (double v : c.mean) out.f32(to_f32(v));
  }
  return out.take();
}

EmbeddingMap3D decode_map3d(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "DVE3");
  in.expect_magic("DVE3");
  in.expect_version();
  const double cell_size = in.f32();
  const std::size_t d = in.u32();
  const std::uint64_t n = in.u64();
  if (!(cell_size > 0.0)) throw Error(ErrorCode::BadSchema, "DVE3 cell_size must be positive");
  in.expect_payload(n, 16 + 4 * static_cast<std::uint64_t>(d));
  std::vector<EmbeddingMap3D::Cell> cells(n);
  std::set<VoxelKey> seen;
  for (auto& c : cells) {
    c.key = {in.i32(), in.i32(), in.i32()};
    c.count = in.u32();
    c.mean.resize(d);
    for (auto& x : c.mean) x = static_cast<double>(in.f32());
    if (!seen.insert(c.key).second) throw Error(ErrorCode::DuplicateSegment, "DVE3 repeats a voxel key");
  }
  return EmbeddingMap3D(cell_size, d, std::move(cells));
}

void write_map3d(const EmbeddingMap3D& map, const fs::path& path) { write_file(path, encode_map3d(map)); }
EmbeddingMap3D read_map3d(const fs::path& path) { return decode_map3d(read_file(path)); }

// ---------------------------------------------------------------------------
// PGM

Bytes encode_similarity_pgm(std::size_t height, std::size_t width, std::span<const double> similarity) {
  if (similarity.size() != height * width) throw Error(ErrorCode::ShapeMismatch, "similarity count != H*W");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(header.size() + similarity.size());
  for (double s : similarity) {
    const double t = (std::clamp(s, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(t)));
  }
  return out;
}

Bytes encode_depth_pgm(const DepthImage& depth) {
  const std::string header =
      "P5\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n65535\n";
  Bytes out(header.begin(), header.end());
  for (auto d : depth.depth) {
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d & 0xFF));
  }
  return out;
}

DepthImage decode_depth_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw Error(ErrorCode::BadSchema, "malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw Error(ErrorCode::BadMagic, "not a P5 PGM");
  pos = 2;
  DepthImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error(ErrorCode::BadSchema, "malformed PGM header");
  ++pos;
  const std::size_t sample = maxval > 255 ? 2 : 1;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n * sample) throw Error(ErrorCode::TruncatedPayload, "PGM payload shorter than declared");
  img.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.depth[i] = sample == 2 ? static_cast<std::uint16_t>((bytes[pos] << 8) | bytes[pos + 1]) : bytes[pos];
    pos += sample;
  }
  return img;
}

DepthImage read_depth_image(const fs::path& path) { return decode_depth_pgm(read_file(path)); }

// ---------------------------------------------------------------------------
// JSON artifacts

std::vector<const BankEntry*> EmbeddingBank::find(std::string_view name) const {
  std::vector<const BankEntry*> out;
  for (const auto& e : entries) {
    if (e.name == name) out.push_back(&e);
  }
  return out;
}

EmbeddingBank parse_embedding_bank(std::string_view text) {
  const auto j = parse_json(text, "embedding bank");
  EmbeddingBank bank;
  const auto dim = field<std::int64_t>(j, "dim");
  if (dim <= 0) throw Error(ErrorCode::BadSchema, "bank dim must be positive");
  bank.dim = static_cast<std::size_t>(dim);
  if (!j.at("entries").is_array()) throw Error(ErrorCode::BadSchema, "'entries' must be an array");
  for (const auto& e : j.at("entries")) {
    auto name = field<std::string>(e, "name");
    auto values = number_array(e.at("vector"), "entry vector");
    if (values.size() != bank.dim) {
      throw Error(ErrorCode::DimMismatch, "entry '" + name + "' has " + std::to_string(values.size()) +
                                              " values under dim " + std::to_string(bank.dim));
    }
    bank.entries.push_back({std::move(name), EmbeddingVector(std::move(values))});
  }
  return bank;
}

EmbeddingBank load_embedding_bank(const fs::path& path) { return parse_embedding_bank(read_text(path)); }

std::string dump_embedding_bank(const EmbeddingBank& bank) {
  json j;
  j["dim"] = bank.dim;
  j["entries"] = json::array();
  for (const auto& e : bank.entries) j["entries"].push_back({{"name", e.name}, {"vector", e.vector.data()}});
  return j.dump();
}

ProbeWeights parse_probe(std::string_view text) {
  const auto j = parse_json(text, "probe");
  const auto classes = field<std::size_t>(j, "classes");
  const auto dim = field<std::size_t>(j, "dim");
  ProbeWeights w;
  w.weight = Matrix(classes, dim, number_array(j.at("weight"), "probe weight"));
  w.bias = number_array(j.at("bias"), "probe bias");
  w.validate();
  return w;
}

ProbeWeights load_probe(const fs::path& path) { return parse_probe(read_text(path)); }

std::string dump_probe(const ProbeWeights& w) {
  json j;
  j["classes"] = w.classes();
  j["dim"] = w.dim();
  j["weight"] = w.weight.data;
  j["bias"] = w.bias;
  return j.dump();
}

StudentParams parse_student(std::string_view text) {
  const auto j = parse_json(text, "student");
  if (!j.contains("layers") || !j.at("layers").is_array()) throw Error(ErrorCode::BadSchema, "missing 'layers'");
  StudentParams params;
  for (const auto& l : j.at("layers")) {
    const auto in = field<std::size_t>(l, "in");
    const auto out = field<std::size_t>(l, "out");
    params.layers.push_back({Matrix(out, in, number_array(l.at("weight"), "layer weight")),
                             number_array(l.at("bias"), "layer bias")});
  }
  params.validate();
  return params;
}

StudentParams load_student(const fs::path& path) { return parse_student(read_text(path)); }

std::string dump_student(const StudentParams& params) {
  json j;
  j["layers"] = json::array();
  for (const auto& l : params.layers) {
    j["layers"].push_back({{"in", l.weight.cols}, {"out", l.weight.rows}, {"weight", l.weight.data}, {"bias", l.bias}});
  }
  return j.dump();
}

std::vector<DistillManifestEntry> load_distill_manifest(const fs::path& path) {
  const auto base = path.parent_path();
  std::vector<DistillManifestEntry> out;
  for (const auto& e : manifest_array(path)) {
    out.push_back({resolve(base, field<std::string>(e, "features")), resolve(base, field<std::string>(e, "mask")),
                   resolve(base, field<std::string>(e, "segments"))});
  }
  return out;
}

std::vector<ProbeManifestEntry> load_probe_manifest(const fs::path& path) {
  const auto base = path.parent_path();
  std::vector<ProbeManifestEntry> out;
  for (const auto& e : manifest_array(path)) {
    out.push_back({resolve(base, field<std::string>(e, "embedding_map")), resolve(base, field<std::string>(e, "labels"))});
  }
  return out;
}

std::vector<ScanManifestEntry> load_scan_manifest(const fs::path& path) {
  const auto base = path.parent_path();
  std::vector<ScanManifestEntry> out;
  for (const auto& e : manifest_array(path)) {
    if (!e.contains("intrinsics")) throw Error(ErrorCode::BadSchema, "scan entry lacks intrinsics");
    const auto& k = e.at("intrinsics");
    CameraIntrinsics intr{field<double>(k, "fx"), field<double>(k, "fy"), field<double>(k, "cx"),
                          field<double>(k, "cy"), field<double>(k, "depth_scale")};
    intr.validate();
    if (!e.contains("pose")) throw Error(ErrorCode::BadSchema, "scan entry lacks pose");
    const auto pose = number_array(e.at("pose"), "pose");
    if (pose.size() != 16) throw Error(ErrorCode::BadSchema, "pose needs 16 row-major values");
    out.push_back({resolve(base, field<std::string>(e, "embedding_map")), resolve(base, field<std::string>(e, "depth")),
                   intr, Pose::from_matrix(pose)});
  }
  return out;
}

std::vector<VolumeManifestEntry> load_volume_manifest(const fs::path& path) {
  const auto base = path.parent_path();
  std::vector<VolumeManifestEntry> out;
  for (const auto& e : manifest_array(path)) {
    VolumeManifestEntry entry{field<std::string>(e, "id"), resolve(base, field<std::string>(e, "embedding_map")),
                              std::nullopt};
    if (e.contains("display_image")) entry.display_image = resolve(base, field<std::string>(e, "display_image"));
    out.push_back(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// info

std::string describe_file(const fs::path& path) {
  const auto bytes = read_file(path);
  std::ostringstream os;
  const auto magic = bytes.size() >= 4 ? std::string(bytes.begin(), bytes.begin() + 4) : std::string();
  const auto first = std::find_if(bytes.begin(), bytes.end(), [](std::uint8_t c) { return !std::isspace(c); });

  if (magic == "DVEM") {
    const auto dtype = bytes.size() > 20 ? bytes[20] : 0xFF;
    const auto v = decode_volume(bytes);
    os << "format: DVEM\nversion: 1\nheight: " << v.height() << "\nwidth: " << v.width() << "\ndim: " << v.dim()
       << "\ndtype: " << (dtype == 0 ? "f32" : "f16") << "\npayload_bytes: " << bytes.size() - 24 << "\n";
  } else if (magic == "SMSK") {
    const auto m = decode_mask_map(bytes);
    const std::set<std::uint16_t> ids(m.ids.begin(), m.ids.end());
    os << "format: SMSK\nversion: 1\nheight: " << m.height << "\nwidth: " << m.width
       << "\nsegments: " << (ids.size() - ids.count(0)) << "\nunlabeled_pixels: "
       << std::count(m.ids.begin(), m.ids.end(), 0) << "\n";
  } else if (magic == "LMAP") {
    const auto l = decode_label_map(bytes);
    std::set<std::uint16_t> ids(l.labels.begin(), l.labels.end());
    ids.erase(kIgnoreLabel);
    os << "format: LMAP\nversion: 1\nheight: " << l.height << "\nwidth: " << l.width << "\ndistinct_labels: "
       << ids.size() << "\nignore_pixels: " << std::count(l.labels.begin(), l.labels.end(), kIgnoreLabel) << "\n";
  } else if (magic == "SEGE") {
    const auto r = decode_segment_records(bytes);
    const bool global = std::any_of(r.begin(), r.end(), [](const SegmentRecord& s) { return s.is_global(); });
    os << "format: SEGE\nversion: 1\nrecords: " << r.size() << "\ndim: " << (r.empty() ? 0 : r.front().raw_embedding.dim())
       << "\nglobal_record: " << (global ? "yes" : "no") << "\n";
  } else if (magic == "DVE3") {
    const auto m = decode_map3d(bytes);
    std::uint64_t obs = 0;
    for (const auto& c : m.cells()) obs += c.count;
    os << "format: DVE3\nversion: 1\ncell_size: " << m.cell_size() << "\ndim: " << m.dim() << "\ncells: " << m.size()
       << "\nobservations: " << obs << "\n";
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    const auto img = decode_depth_pgm(bytes);
    os << "format: PGM\nheight: " << img.height << "\nwidth: " << img.width << "\n";
  } else if (first != bytes.end() && (*first == '{' || *first == '[')) {
    const auto j = parse_json(std::string(bytes.begin(), bytes.end()), "json");
    if (j.is_object() && j.contains("entries")) {
      const auto bank = parse_embedding_bank(j.dump());
      std::set<std::string> names;
      for (const auto& e : bank.entries) names.insert(e.name);
      os << "format: bank\ndim: " << bank.dim << "\nentries: " << bank.entries.size() << "\nunique_names: "
         << names.size() << "\n";
    } else if (j.is_object() && j.contains("classes")) {
      const auto w = parse_probe(j.dump());
      os << "format: probe\nclasses: " << w.classes() << "\ndim: " << w.dim() << "\n";
    } else if (j.is_object() && j.contains("layers")) {
      const auto s = parse_student(j.dump());
      os << "format: student\nlayers: " << s.layers.size() << "\ninput_dim: " << s.input_dim()
         << "\noutput_dim: " << s.output_dim() << "\n";
    } else if (j.is_array()) {
      os << "format: manifest\nentries: " << j.size() << "\n";
    } else {
      throw Error(ErrorCode::BadSchema, "unrecognized JSON document");
    }
  } else {
    throw Error(ErrorCode::BadMagic, "unrecognized file " + path.string());
  }
  return os.str();
}

}  // namespace dve
