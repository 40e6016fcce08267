#include "dve/embedding.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "dve/error.hpp"

namespace dve {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, what);
  }
}

}  // namespace

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  require_finite(values_, "embedding vector has non-finite entries");
}

DenseEmbeddingMap::DenseEmbeddingMap(std::size_t height, std::size_t width, std::size_t dim)
    : height_(height), width_(width), dim_(dim), data_(height * width * dim, 0.0) {}

DenseEmbeddingMap::DenseEmbeddingMap(std::size_t height, std::size_t width, std::size_t dim,
                                     std::vector<double> data)
    : height_(height), width_(width), dim_(dim), data_(std::move(data)) {
  if (data_.size() != height * width * dim) {
    throw Error(ErrorCode::ShapeMismatch, "volume data length " + std::to_string(data_.size()) +
                                              " != " + std::to_string(height * width * dim));
  }
  require_finite(data_, "volume has non-finite entries");
}

SegmentMaskMap::SegmentMaskMap(std::size_t h, std::size_t w, std::vector<std::uint16_t> values)
    : height(h), width(w), ids(std::move(values)) {
  if (ids.size() != h * w) throw Error(ErrorCode::ShapeMismatch, "mask id count does not match H*W");
}

void SuppressionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "dot of different lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

void l2_normalize_into(std::span<const double> v, std::span<double> out) {
  const double n = l2_norm(v);
  if (n < kZeroNorm) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
}

EmbeddingVector l2_normalize(const EmbeddingVector& v) {
  std::vector<double> out(v.dim());
  l2_normalize_into(v.values(), out);
  return EmbeddingVector(std::move(out));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "cosine of different lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na < kZeroNorm || nb < kZeroNorm) throw Error(ErrorCode::ZeroVector, "cosine with a zero vector");
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

EmbeddingVector suppress_context(const EmbeddingVector& e_seg, const EmbeddingVector& e_img,
                                 const SuppressionConfig& cfg) {
  cfg.validate();
  if (e_seg.dim() != e_img.dim()) throw Error(ErrorCode::DimMismatch, "segment and image embeddings differ in D");
  const double ns = l2_norm(e_seg.values());
  const double ni = l2_norm(e_img.values());
  if (ns < kZeroNorm) throw Error(ErrorCode::ZeroVector, "segment embedding has zero norm");
  if (ni < kZeroNorm) throw Error(ErrorCode::ZeroVector, "image embedding has zero norm");
  std::vector<double> out(e_seg.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = e_seg[i] / ns - cfg.alpha * (e_img[i] / ni);
  return EmbeddingVector(std::move(out));
}

void refine_records(std::span<SegmentRecord> records, const SuppressionConfig& cfg) {
  const auto global = std::find_if(records.begin(), records.end(),
                                   [](const SegmentRecord& r) { return r.is_global(); });
  if (global == records.end()) throw Error(ErrorCode::MissingSegment, "0 (whole-image record)");
  const EmbeddingVector image = global->raw_embedding;
  for (auto& r : records) {
    if (r.is_global()) continue;
    r.refined_embedding = suppress_context(r.raw_embedding, image, cfg);
  }
}

TeacherVolume assemble_teacher_volume(const SegmentMaskMap& mask, std::span<const SegmentRecord> records,
                                      std::size_t dim) {
  std::array<const SegmentRecord*, 65536> by_id{};
  for (const auto& r : records) by_id[r.segment_id] = &r;

  // Validate every referenced id once before touching the volume.
  std::array<bool, 65536> checked{};
  for (std::uint16_t id : mask.ids) {
    if (id == 0 || checked[id]) continue;
    checked[id] = true;
    const SegmentRecord* r = by_id[id];
    if (r == nullptr || !r->refined_embedding) throw Error(ErrorCode::MissingSegment, std::to_string(id));
    if (r->refined_embedding->dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "segment " + std::to_string(id) + " has D=" +
                                              std::to_string(r->refined_embedding->dim()));
    }
    if (l2_norm(r->refined_embedding->values()) < kZeroNorm) {
      throw Error(ErrorCode::ZeroVector, std::to_string(id));
    }
  }

  TeacherVolume out;
  out.embeddings = DenseEmbeddingMap(mask.height, mask.width, dim);
  out.coverage.assign(mask.ids.size(), 0);
  for (std::size_t p = 0; p < mask.ids.size(); ++p) {
    const std::uint16_t id = mask.ids[p];
    if (id == 0) continue;
    const auto& src = by_id[id]->refined_embedding->data();
    std::copy(src.begin(), src.end(), out.embeddings.pixel(p).begin());
    out.coverage[p] = 1;
    ++out.covered;
  }
  return out;
}

}  // namespace dve
