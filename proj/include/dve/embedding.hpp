#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dve {

inline constexpr std::size_t kDefaultDim = 768;
/// Norms below this are treated as degenerate everywhere in the library.
inline constexpr double kZeroNorm = 1e-12;
inline constexpr double kDefaultAlpha = 0.65;

/// A D-dimensional embedding with finite entries.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values);

  static EmbeddingVector zeros(std::size_t dim) { return EmbeddingVector(std::vector<double>(dim, 0.0)); }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

/// H x W x D volume stored row-major (row, column, channel).
class DenseEmbeddingMap {
 public:
  DenseEmbeddingMap() = default;
  DenseEmbeddingMap(std::size_t height, std::size_t width, std::size_t dim);
  DenseEmbeddingMap(std::size_t height, std::size_t width, std::size_t dim, std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t pixels() const noexcept { return height_ * width_; }

  std::span<const double> pixel(std::size_t index) const noexcept {
    return {data_.data() + index * dim_, dim_};
  }
  std::span<double> pixel(std::size_t index) noexcept { return {data_.data() + index * dim_, dim_}; }
  std::span<const double> at(std::size_t row, std::size_t col) const noexcept { return pixel(row * width_ + col); }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  bool same_shape(const DenseEmbeddingMap& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && dim_ == other.dim_;
  }

  friend bool operator==(const DenseEmbeddingMap&, const DenseEmbeddingMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// One segment id per pixel; 0 = unlabeled.
struct SegmentMaskMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> ids;

  SegmentMaskMap() = default;
  SegmentMaskMap(std::size_t h, std::size_t w, std::vector<std::uint16_t> values);

  std::uint16_t at(std::size_t row, std::size_t col) const noexcept { return ids[row * width + col]; }
};

inline constexpr std::uint16_t kGlobalSegmentId = 0;

/// Teacher output for one mask. segment_id 0 is the whole-image embedding.
struct SegmentRecord {
  std::uint16_t segment_id = 0;
  std::optional<std::uint16_t> class_id;
  EmbeddingVector raw_embedding;
  std::optional<EmbeddingVector> refined_embedding;

  bool is_global() const noexcept { return segment_id == kGlobalSegmentId; }
};

struct SuppressionConfig {
  double alpha = kDefaultAlpha;

  void validate() const;
};

struct TeacherVolume {
  DenseEmbeddingMap embeddings;
  std::vector<std::uint8_t> coverage;  // 1 = pixel in the supervised set
  std::size_t covered = 0;

  bool empty() const noexcept { return covered == 0; }
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Throws ZeroVector when the norm is below kZeroNorm.
EmbeddingVector l2_normalize(const EmbeddingVector& v);
void l2_normalize_into(std::span<const double> v, std::span<double> out);

/// Clamped to [-1, 1]. Throws ZeroVector or DimMismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.values(), b.values());
}

/// Context suppression: e_seg/|e_seg| - alpha * e_img/|e_img|.
/// The result is left un-normalized and may be zero.
EmbeddingVector suppress_context(const EmbeddingVector& e_seg, const EmbeddingVector& e_img,
                                 const SuppressionConfig& cfg);

/// Fills refined_embedding of every non-global record using the segment_id 0
/// record as the image embedding. Throws MissingSegment(0) if it is absent.
void refine_records(std::span<SegmentRecord> records, const SuppressionConfig& cfg);

/// Places each record's refined embedding on the pixels of its segment.
TeacherVolume assemble_teacher_volume(const SegmentMaskMap& mask, std::span<const SegmentRecord> records,
                                      std::size_t dim);

}  // namespace dve
