#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "dve/closed_set.hpp"
#include "dve/embedding.hpp"
#include "dve/exec.hpp"

namespace dve {

using Vec3 = std::array<double, 3>;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double depth_scale = 0.001;  // meters per depth unit

  void validate() const;
};

/// Rigid camera-to-world transform.
class Pose {
 public:
  Pose() = default;
  /// Throws InvalidArgument unless rotation is orthonormal with det +1 (1e-6).
  Pose(const std::array<double, 9>& rotation, const Vec3& translation);
  /// 16 row-major reals; the last row must be (0, 0, 0, 1).
  static Pose from_matrix(std::span<const double> row_major_4x4);

  const std::array<double, 9>& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }
  Vec3 apply(const Vec3& p) const noexcept;

 private:
  std::array<double, 9> rotation_{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation_{0, 0, 0};
};

struct DepthImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> depth;
};

struct BackprojectedPoint {
  Vec3 world;
  std::size_t pixel = 0;  // row * width + col
};

/// Pinhole back-projection of every pixel with nonzero depth.
std::vector<BackprojectedPoint> backproject(const DepthImage& depth, const CameraIntrinsics& intr, const Pose& pose);

struct VoxelKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept;
};

/// floor(coordinate / cell_size) per axis.
VoxelKey voxel_key(const Vec3& point, double cell_size);

struct Observation {
  Vec3 point;
  std::span<const double> embedding;
};

/// How one observation contributes to its cell's running sum.
enum class Accumulation { normalized, raw };

/// Writes the contribution of `embedding` into `out`; returns false when the
/// embedding is degenerate and must be skipped.
bool cell_contribution(std::span<const double> embedding, Accumulation mode, std::span<double> out);

/// Single-writer accumulator of per-cell embedding sums.
class MapBuilder {
 public:
  struct Cell {
    std::vector<double> sum;
    std::uint32_t count = 0;
  };

  MapBuilder(double cell_size, std::size_t dim, Accumulation mode = Accumulation::normalized);

  void insert(std::span<const Observation> observations);
  void insert(const Vec3& point, std::span<const double> embedding);

  double cell_size() const noexcept { return cell_size_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t skipped() const noexcept { return skipped_; }
  std::size_t cell_count() const noexcept { return cells_.size(); }
  const std::unordered_map<VoxelKey, Cell, VoxelKeyHash>& cells() const noexcept { return cells_; }

 private:
  double cell_size_;
  std::size_t dim_;
  Accumulation mode_;
  std::unordered_map<VoxelKey, Cell, VoxelKeyHash> cells_;
  std::size_t skipped_ = 0;
};

/// Immutable map with one unit embedding per cell, cells sorted by key.
class EmbeddingMap3D {
 public:
  struct Cell {
    VoxelKey key;
    std::vector<double> mean;
    std::uint32_t count = 0;
  };

  EmbeddingMap3D() = default;
  EmbeddingMap3D(double cell_size, std::size_t dim, std::vector<Cell> cells);

  double cell_size() const noexcept { return cell_size_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }
  std::size_t size() const noexcept { return cells_.size(); }

 private:
  double cell_size_ = 0.10;
  std::size_t dim_ = 0;
  std::vector<Cell> cells_;
};

struct FreezeResult {
  EmbeddingMap3D map;
  std::vector<VoxelKey> dropped;  // cells whose sum cancelled out
};

FreezeResult map_freeze(const MapBuilder& builder);

struct CellScore {
  VoxelKey key;
  double similarity = 0.0;
};

/// Cosine per cell, sorted by descending similarity then key.
std::vector<CellScore> map_query(const EmbeddingMap3D& map, std::span<const double> query,
                                 Exec exec = Exec::parallel);

struct CellLabel {
  VoxelKey key;
  std::uint16_t class_id = 0;
};

std::vector<CellLabel> map_classify(const EmbeddingMap3D& map, const ProbeWeights& w, Exec exec = Exec::parallel);

inline constexpr double kDefaultCellSize = 0.10;

}  // namespace dve
