#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dve/embedding.hpp"
#include "dve/exec.hpp"
#include "dve/optim.hpp"

namespace dve {

struct LossReport {
  double loss = 0.0;
  std::size_t covered_pixels = 0;
};

/// Mean cosine distance 1 - cos(y_p, yhat_p) over covered pixels.
/// Throws EmptyCoverage, DimMismatch, or ZeroVector (covered prediction with
/// norm below kZeroNorm).
LossReport cosine_distill_loss(const DenseEmbeddingMap& pred, const TeacherVolume& teacher,
                               Exec exec = Exec::parallel);

/// d loss / d pred. Zero on uncovered pixels; orthogonal to pred elsewhere.
DenseEmbeddingMap cosine_distill_loss_grad(const DenseEmbeddingMap& pred, const TeacherVolume& teacher,
                                           Exec exec = Exec::parallel);

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
};

/// Per-pixel MLP: affine layers with a rectifier between them, final layer linear.
struct StudentParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;
};

/// Random init with fan-in scaled normal weights and zero biases.
/// dims = {F, hidden..., D}.
StudentParams init_student(std::span<const std::size_t> dims, std::uint64_t seed);

/// Applies the layer chain to every pixel's feature vector independently.
DenseEmbeddingMap student_forward(const DenseEmbeddingMap& features, const StudentParams& params,
                                  Exec exec = Exec::parallel);

struct DistillSample {
  DenseEmbeddingMap features;
  TeacherVolume teacher;
};

struct StudentTrainResult {
  StudentParams params;
  /// Loss over all covered pixels of all samples, evaluated before each update.
  std::vector<double> loss_history;
};

/// Full-batch training: the loss pools every covered pixel of every sample.
/// Throws EmptyCoverage if no sample has coverage, NonFinite on divergence.
StudentTrainResult train_student(std::span<const DistillSample> samples, const TrainConfig& cfg,
                                 StudentParams init, Exec exec = Exec::parallel);

/// Feature maps for self-contained runs: each segment id gets a random
/// F-vector (a projection of its one-hot code), pixels add Gaussian noise.
DenseEmbeddingMap make_synthetic_features(const SegmentMaskMap& mask, std::size_t feature_dim, double noise,
                                          std::uint64_t seed);

}  // namespace dve
