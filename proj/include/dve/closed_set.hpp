#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dve/embedding.hpp"
#include "dve/exec.hpp"
#include "dve/optim.hpp"

namespace dve {

inline constexpr std::uint16_t kIgnoreLabel = 0xFFFF;

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::vector<std::uint16_t> values);
  LabelMap(std::size_t h, std::size_t w, std::uint16_t fill) : height(h), width(w), labels(h * w, fill) {}

  std::size_t pixels() const noexcept { return labels.size(); }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Unit-norm reference rows grouped into named classes. Usually one row per
/// class; several rows per class arise from multi-prompt banks, in which case
/// a class scores the max over its rows.
class ReferenceSet {
 public:
  /// One row per class. Rows are normalized; names must be unique.
  static ReferenceSet from_rows(std::vector<std::string> class_names, const Matrix& rows);
  /// Entries sharing a name become one class (first-appearance order).
  static ReferenceSet from_named_rows(std::span<const std::string> names, const Matrix& rows);

  std::size_t classes() const noexcept { return class_names_.size(); }
  std::size_t dim() const noexcept { return rows_.cols; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const Matrix& rows() const noexcept { return rows_; }
  const std::vector<std::size_t>& row_class() const noexcept { return row_class_; }

 private:
  std::vector<std::string> class_names_;
  Matrix rows_;
  std::vector<std::size_t> row_class_;
};

enum class EmbeddingSource { refined, raw };

/// Per-class mean of segment embeddings, normalized. Classes are 0..num_classes-1;
/// records without a class_id are ignored. Throws EmptyClass or ZeroVector.
ReferenceSet visual_mean_references(std::span<const SegmentRecord> records, std::size_t num_classes,
                                    std::span<const std::string> names = {},
                                    EmbeddingSource source = EmbeddingSource::refined);

struct Classification {
  LabelMap labels;
  std::vector<double> similarity;  // winning cosine per pixel, 0 for ignored pixels
  std::size_t zero_pixels = 0;     // zero-norm pixels, labeled ignore
};

/// Cosine arg-max against the references; ties go to the lowest class index.
Classification classify_argmax(const DenseEmbeddingMap& map, const ReferenceSet& refs, Exec exec = Exec::parallel);

struct ProbeWeights {
  Matrix weight;  // C x D
  std::vector<double> bias;

  std::size_t classes() const noexcept { return weight.rows; }
  std::size_t dim() const noexcept { return weight.cols; }
  void validate() const;
};

struct LabeledSample {
  DenseEmbeddingMap map;
  LabelMap labels;
};

struct ProbeTrainResult {
  ProbeWeights weights;
  std::vector<double> loss_history;  // cross-entropy before each update
};

/// Iterations for the probe given the distillation schedule (one tenth).
std::size_t probe_iterations_for(std::size_t distill_iterations) noexcept;

/// Defaults: learning rate 1e-3, plain gradient descent.
TrainConfig default_probe_config();

/// Full-batch softmax cross-entropy over all non-ignore pixels.
/// Throws NoLabeledPixels, DimMismatch, NonFinite.
ProbeTrainResult train_linear_probe(std::span<const LabeledSample> samples, std::size_t num_classes,
                                    const TrainConfig& cfg, Exec exec = Exec::parallel);

double probe_cross_entropy(std::span<const LabeledSample> samples, const ProbeWeights& w,
                           Exec exec = Exec::parallel);

/// Affine arg-max; ties go to the lowest class index.
LabelMap probe_predict(const DenseEmbeddingMap& map, const ProbeWeights& w, Exec exec = Exec::parallel);

/// Arg-max of affine scores for one vector.
std::uint16_t probe_classify(std::span<const double> x, const ProbeWeights& w);

struct ClassIou {
  std::uint16_t class_id = 0;
  std::optional<double> iou;  // empty when the class has zero union
};

struct MiouReport {
  std::vector<ClassIou> per_class;  // excluded classes are not listed
  double mean_iou = 0.0;
  std::vector<std::uint16_t> excluded_classes;
  std::size_t evaluated_pixels = 0;
};

/// Confusion-matrix IoU over pixels whose ground truth is neither ignore nor
/// excluded. Throws ShapeMismatch, DimMismatch (label >= C), NoLabeledPixels.
MiouReport evaluate_miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes,
                         std::span<const std::uint16_t> excluded = {});

/// Fraction of non-ignore ground-truth pixels predicted correctly.
double pixel_accuracy(const LabelMap& pred, const LabelMap& gt);

}  // namespace dve
