#include "dve/map3d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dve/error.hpp"

namespace dve {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0 && depth_scale > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics need fx, fy, depth_scale > 0 and finite principal point");
  }
}

Pose::Pose(const std::array<double, 9>& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const auto& r = rotation_;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += r[3 * k + i] * r[3 * k + j];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, "pose rotation is not orthonormal");
      }
    }
  }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::abs(det - 1.0) > 1e-6) throw Error(ErrorCode::InvalidArgument, "pose rotation has det != +1");
  for (double t : translation_) {
    if (!std::isfinite(t)) throw Error(ErrorCode::InvalidArgument, "pose translation is not finite");
  }
}

Pose Pose::from_matrix(std::span<const double> m) {
  if (m.size() != 16) throw Error(ErrorCode::InvalidArgument, "pose needs 16 row-major values");
  if (std::abs(m[12]) > 1e-9 || std::abs(m[13]) > 1e-9 || std::abs(m[14]) > 1e-9 || std::abs(m[15] - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "pose last row must be 0 0 0 1");
  }
  return Pose({m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]}, {m[3], m[7], m[11]});
}

Vec3 Pose::apply(const Vec3& p) const noexcept {
  const auto& r = rotation_;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation_[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation_[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation_[2]};
}

std::vector<BackprojectedPoint> backproject(const DepthImage& depth, const CameraIntrinsics& intr, const Pose& pose) {
  intr.validate();
  if (depth.depth.size() != depth.height * depth.width) {
    throw Error(ErrorCode::ShapeMismatch, "depth buffer does not match H*W");
  }
  std::vector<BackprojectedPoint> out;
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const std::size_t p = v * depth.width + u;
      const std::uint16_t d = depth.depth[p];
      if (d == 0) continue;
      const double z = static_cast<double>(d) * intr.depth_scale;
      const Vec3 cam{(static_cast<double>(u) - intr.cx) * z / intr.fx, (static_cast<double>(v) - intr.cy) * z / intr.fy,
                     z};
      out.push_back({pose.apply(cam), p});
    }
  }
  return out;
}

std::size_t VoxelKeyHash::operator()(const VoxelKey& k) const noexcept {
  // Teschner et al. spatial hash primes.
  const auto ux = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x));
  const auto uy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y));
  const auto uz = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z));
  return static_cast<std::size_t>((ux * 73856093ULL) ^ (uy * 19349663ULL) ^ (uz * 83492791ULL));
}

namespace {

std::int32_t axis_index(double coordinate, double cell_size) {
  const double q = coordinate / cell_size;
  // snap near-boundary points to the upper cell
  const double snapped = std::nearbyint(q);
  const double k = std::abs(q - snapped) <= 1e-9 * std::max(1.0, std::abs(q)) ? snapped : std::floor(q);
  if (!std::isfinite(k) || k < std::numeric_limits<std::int32_t>::min() ||
      k > std::numeric_limits<std::int32_t>::max()) {
    throw Error(ErrorCode::InvalidArgument, "point outside the representable voxel range");
  }
  return static_cast<std::int32_t>(k);
}

}  // namespace

VoxelKey voxel_key(const Vec3& point, double cell_size) {
  return {axis_index(point[0], cell_size), axis_index(point[1], cell_size), axis_index(point[2], cell_size)};
}

bool cell_contribution(std::span<const double> embedding, Accumulation mode, std::span<double> out) {
  const double n = l2_norm(embedding);
  if (n < kZeroNorm || !std::isfinite(n)) return false;
  if (mode == Accumulation::normalized) {
    for (std::size_t k = 0; k < embedding.size(); ++k) out[k] = embedding[k] / n;
  } else {
    std::copy(embedding.begin(), embedding.end(), out.begin());
  }
  return true;
}

MapBuilder::MapBuilder(double cell_size, std::size_t dim, Accumulation mode)
    : cell_size_(cell_size), dim_(dim), mode_(mode) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw Error(ErrorCode::InvalidArgument, "cell_size must be > 0");
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "dim must be > 0");
}

void MapBuilder::insert(const Vec3& point, std::span<const double> embedding) {
  if (embedding.size() != dim_) {
    throw Error(ErrorCode::DimMismatch, "observation D=" + std::to_string(embedding.size()) + " vs map D=" +
                                            std::to_string(dim_));
  }
  for (double c : point) {
    if (!std::isfinite(c)) throw Error(ErrorCode::InvalidArgument, "observation point is not finite");
  }
  std::vector<double> contribution(dim_);
  if (!cell_contribution(embedding, mode_, contribution)) {
    ++skipped_;
    return;
  }
  auto& cell = cells_[voxel_key(point, cell_size_)];
  if (cell.sum.empty()) cell.sum.assign(dim_, 0.0);
  for (std::size_t k = 0; k < dim_; ++k) cell.sum[k] += contribution[k];
  ++cell.count;
}

void MapBuilder::insert(std::span<const Observation> observations) {
  for (const auto& o : observations) {
    if (o.embedding.size() != dim_) throw Error(ErrorCode::DimMismatch, "observation dim does not match map");
  }
  for (const auto& o : observations) insert(o.point, o.embedding);
}

EmbeddingMap3D::EmbeddingMap3D(double cell_size, std::size_t dim, std::vector<Cell> cells)
    : cell_size_(cell_size), dim_(dim), cells_(std::move(cells)) {
  std::sort(cells_.begin(), cells_.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
  for (const auto& c : cells_) {
    if (c.mean.size() != dim_) throw Error(ErrorCode::DimMismatch, "cell embedding dim does not match map");
  }
}

FreezeResult map_freeze(const MapBuilder& builder) {
  std::vector<EmbeddingMap3D::Cell> cells;
  std::vector<VoxelKey> dropped;
  cells.reserve(builder.cell_count());
  for (const auto& [key, cell] : builder.cells()) {
    const double n = l2_norm(cell.sum);
    if (n < 1e-9) {
      dropped.push_back(key);
      continue;
    }
    std::vector<double> mean(cell.sum.size());
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = cell.sum[k] / n;
    cells.push_back({key, std::move(mean), cell.count});
  }
  std::sort(dropped.begin(), dropped.end());
  return {EmbeddingMap3D(builder.cell_size(), builder.dim(), std::move(cells)), std::move(dropped)};
}

std::vector<CellScore> map_query(const EmbeddingMap3D& map, std::span<const double> query, Exec exec) {
  if (query.size() != map.dim()) throw Error(ErrorCode::DimMismatch, "query dim does not match map");
  const double nq = l2_norm(query);
  if (nq < kZeroNorm) throw Error(ErrorCode::ZeroVector, "query vector has zero norm");
  const auto& cells = map.cells();
  std::vector<CellScore> out(cells.size());
  for_each_index(cells.size(), exec, [&](std::size_t i) {
    const auto& m = cells[i].mean;
    double d = 0.0, mm = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      d += m[k] * query[k];
      mm += m[k] * m[k];
    }
    out[i] = {cells[i].key, std::clamp(d / (std::sqrt(mm) * nq), -1.0, 1.0)};
  });
  std::stable_sort(out.begin(), out.end(), [](const CellScore& a, const CellScore& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.key < b.key;
  });
  return out;
}

std::vector<CellLabel> map_classify(const EmbeddingMap3D& map, const ProbeWeights& w, Exec exec) {
  w.validate();
  if (w.dim() != map.dim()) throw Error(ErrorCode::DimMismatch, "probe dim does not match map");
  const auto& cells = map.cells();
  std::vector<CellLabel> out(cells.size());
  for_each_index(cells.size(), exec,
                 [&](std::size_t i) { out[i] = {cells[i].key, probe_classify(cells[i].mean, w)}; });
  return out;
}

}  // namespace dve
