#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dve/closed_set.hpp"
#include "dve/distillation.hpp"
#include "dve/embedding.hpp"
#include "dve/map3d.hpp"

namespace dve {

// Binary formats. All multi-byte values are little-endian.
//
//   DVEM  magic | u32 version=1 | u32 H | u32 W | u32 D | u8 dtype | 3 x u8 pad=0 | H*W*D values
//         dtype 0 = f32, 1 = f16; values row-major (row, column, channel)
//   SMSK  magic | u32 version=1 | u32 H | u32 W | H*W u16 ids (0 = unlabeled)
//   LMAP  magic | u32 version=1 | u32 H | u32 W | H*W u16 labels (0xFFFF = ignore)
//   SEGE  magic | u32 version=1 | u32 N | u32 D | N x (u16 segment_id | u16 class_id (0xFFFF = none) | D x f32)
//   DVE3  magic | u32 version=1 | f32 cell_size | u32 D | u64 cells | cells x (3 x i32 key | u32 count | D x f32)

enum class Dtype : std::uint8_t { f32 = 0, f16 = 1 };

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Bytes encode_volume(const DenseEmbeddingMap& map, Dtype dtype);
DenseEmbeddingMap decode_volume(std::span<const std::uint8_t> bytes);
void write_volume(const DenseEmbeddingMap& map, Dtype dtype, const std::filesystem::path& path);
DenseEmbeddingMap read_volume(const std::filesystem::path& path);

Bytes encode_mask_map(const SegmentMaskMap& mask);
SegmentMaskMap decode_mask_map(std::span<const std::uint8_t> bytes);
void write_mask_map(const SegmentMaskMap& mask, const std::filesystem::path& path);
SegmentMaskMap read_mask_map(const std::filesystem::path& path);

Bytes encode_label_map(const LabelMap& labels);
LabelMap decode_label_map(std::span<const std::uint8_t> bytes);
void write_label_map(const LabelMap& labels, const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path);

/// Raw embeddings only; refined embeddings are derived, never stored.
Bytes encode_segment_records(std::span<const SegmentRecord> records);
std::vector<SegmentRecord> decode_segment_records(std::span<const std::uint8_t> bytes);
void write_segment_records(std::span<const SegmentRecord> records, const std::filesystem::path& path);
std::vector<SegmentRecord> read_segment_records(const std::filesystem::path& path);

Bytes encode_map3d(const EmbeddingMap3D& map);
EmbeddingMap3D decode_map3d(std::span<const std::uint8_t> bytes);
void write_map3d(const EmbeddingMap3D& map, const std::filesystem::path& path);
EmbeddingMap3D read_map3d(const std::filesystem::path& path);

/// 8-bit binary PGM (P5); similarity s maps to round((s + 1) / 2 * 255).
Bytes encode_similarity_pgm(std::size_t height, std::size_t width, std::span<const double> similarity);
/// 16-bit binary PGM (P5, maxval 65535, big-endian samples as the format requires).
DepthImage decode_depth_pgm(std::span<const std::uint8_t> bytes);
Bytes encode_depth_pgm(const DepthImage& depth);
DepthImage read_depth_image(const std::filesystem::path& path);

struct BankEntry {
  std::string name;
  EmbeddingVector vector;
};

struct EmbeddingBank {
  std::size_t dim = 0;
  std::vector<BankEntry> entries;

  /// All entries with exactly this name, in file order.
  std::vector<const BankEntry*> find(std::string_view name) const;
};

EmbeddingBank parse_embedding_bank(std::string_view json_text);
EmbeddingBank load_embedding_bank(const std::filesystem::path& path);
std::string dump_embedding_bank(const EmbeddingBank& bank);

ProbeWeights parse_probe(std::string_view json_text);
ProbeWeights load_probe(const std::filesystem::path& path);
std::string dump_probe(const ProbeWeights& w);

StudentParams parse_student(std::string_view json_text);
StudentParams load_student(const std::filesystem::path& path);
std::string dump_student(const StudentParams& params);

/// Distillation manifest: JSON array of
///   {"features": dvem, "mask": smsk, "segments": sege}
/// Relative paths resolve against the manifest's directory.
struct DistillManifestEntry {
  std::filesystem::path features;
  std::filesystem::path mask;
  std::filesystem::path segments;
};
std::vector<DistillManifestEntry> load_distill_manifest(const std::filesystem::path& path);

/// Probe manifest: JSON array of {"embedding_map": dvem, "labels": lmap}.
struct ProbeManifestEntry {
  std::filesystem::path embedding_map;
  std::filesystem::path labels;
};
std::vector<ProbeManifestEntry> load_probe_manifest(const std::filesystem::path& path);

/// Scan manifest: JSON array of {embedding_map, depth, intrinsics: {fx, fy, cx, cy, depth_scale}, pose: 16 reals}.
struct ScanManifestEntry {
  std::filesystem::path embedding_map;
  std::filesystem::path depth;
  CameraIntrinsics intrinsics;
  Pose pose;
};
std::vector<ScanManifestEntry> load_scan_manifest(const std::filesystem::path& path);

/// Service manifest: JSON array of {"id": str, "embedding_map": dvem, "display_image"?: path}.
struct VolumeManifestEntry {
  std::string id;
  std::filesystem::path embedding_map;
  std::optional<std::filesystem::path> display_image;
};
std::vector<VolumeManifestEntry> load_volume_manifest(const std::filesystem::path& path);

/// Human-readable header summary of any supported file, one "key: value" per line.
std::string describe_file(const std::filesystem::path& path);

}  // namespace dve
