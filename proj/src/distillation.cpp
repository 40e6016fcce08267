#include "dve/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "dve/error.hpp"

namespace dve {

namespace {

/// Per-pixel cosine distance and (optionally) its gradient scaled by `scale`.
/// `pred`, `teacher` and `grad` are flat N x dim buffers.
void cosine_terms(std::span<const double> pred, std::span<const double> teacher,
                  std::span<const std::uint8_t> coverage, std::size_t dim, std::span<double> terms,
                  double* grad, double scale, Exec exec) {
  const std::size_t n = coverage.size();
  for_each_index(n, exec, [&](std::size_t p) {
    terms[p] = 0.0;
    double* g = grad ? grad + p * dim : nullptr;
    if (!coverage[p]) {
      if (g) std::fill(g, g + dim, 0.0);
      return;
    }
    const double* y = teacher.data() + p * dim;
    const double* yh = pred.data() + p * dim;
    double yy = 0.0, hh = 0.0, yhy = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      yy += y[k] * y[k];
      hh += yh[k] * yh[k];
      yhy += y[k] * yh[k];
    }
    const double ny = std::sqrt(yy);
    const double nh = std::sqrt(hh);
    if (nh < kZeroNorm) throw Error(ErrorCode::ZeroVector, "prediction at covered pixel " + std::to_string(p));
    if (ny < kZeroNorm) throw Error(ErrorCode::ZeroVector, "teacher at covered pixel " + std::to_string(p));
    const double cos = yhy / (ny * nh);
    terms[p] = 1.0 - std::clamp(cos, -1.0, 1.0);
    if (g) {
      const double a = scale * cos / hh;
      const double b = scale / (ny * nh);
      for (std::size_t k = 0; k < dim; ++k) g[k] = a * yh[k] - b * y[k];
    }
  });
}

void check_pair(const DenseEmbeddingMap& pred, const TeacherVolume& teacher) {
  if (!pred.same_shape(teacher.embeddings) || teacher.coverage.size() != pred.pixels()) {
    throw Error(ErrorCode::DimMismatch, "prediction and teacher volume shapes differ");
  }
  if (teacher.covered == 0) throw Error(ErrorCode::EmptyCoverage, "teacher volume covers no pixel");
}

double ordered_sum(std::span<const double> terms) {
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

LossReport cosine_distill_loss(const DenseEmbeddingMap& pred, const TeacherVolume& teacher, Exec exec) {
  check_pair(pred, teacher);
  std::vector<double> terms(pred.pixels());
  cosine_terms(pred.data(), teacher.embeddings.data(), teacher.coverage, pred.dim(), terms, nullptr, 0.0, exec);
  const double loss = ordered_sum(terms) / static_cast<double>(teacher.covered);
  return {std::clamp(loss, 0.0, 2.0), teacher.covered};
}

DenseEmbeddingMap cosine_distill_loss_grad(const DenseEmbeddingMap& pred, const TeacherVolume& teacher, Exec exec) {
  check_pair(pred, teacher);
  DenseEmbeddingMap grad(pred.height(), pred.width(), pred.dim());
  std::vector<double> terms(pred.pixels());
  cosine_terms(pred.data(), teacher.embeddings.data(), teacher.coverage, pred.dim(), terms, grad.data().data(),
               1.0 / static_cast<double>(teacher.covered), exec);
  return grad;
}

// ---------------------------------------------------------------------------
// Student

std::size_t StudentParams::input_dim() const {
  if (layers.empty()) throw Error(ErrorCode::InvalidArgument, "student has no layers");
  return layers.front().weight.cols;
}

std::size_t StudentParams::output_dim() const {
  if (layers.empty()) throw Error(ErrorCode::InvalidArgument, "student has no layers");
  return layers.back().weight.rows;
}

void StudentParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::InvalidArgument, "student has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows) {
      throw Error(ErrorCode::DimMismatch, "layer " + std::to_string(l) + " bias length != output dim");
    }
    if (l > 0 && layer.weight.cols != layers[l - 1].weight.rows) {
      throw Error(ErrorCode::DimMismatch, "layer " + std::to_string(l) + " input dim does not chain");
    }
    if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
      throw Error(ErrorCode::NonFinite, "layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

StudentParams init_student(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "student needs at least input and output dims");
  std::mt19937_64 rng(seed);
  StudentParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    if (in == 0 || out == 0) throw Error(ErrorCode::InvalidArgument, "layer dims must be positive");
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : layer.weight.data) w = dist(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

/// Z = X W^T + b for N rows; optional rectifier.
Matrix affine_rows(const Matrix& x, const DenseLayer& layer, bool rectify, Exec exec) {
  const std::size_t out = layer.weight.rows;
  Matrix z(x.rows, out);
  for_each_index(x.rows, exec, [&](std::size_t p) {
    const auto in = x.row(p);
    auto dst = z.row(p);
    for (std::size_t o = 0; o < out; ++o) {
      const auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in.size(); ++i) acc += w[i] * in[i];
      dst[o] = rectify ? std::max(acc, 0.0) : acc;
    }
  });
  return z;
}

/// Activations A_0 = X, ..., A_L = output.
std::vector<Matrix> forward_all(Matrix x, const StudentParams& params, Exec exec) {
  std::vector<Matrix> acts;
  acts.reserve(params.layers.size() + 1);
  acts.push_back(std::move(x));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const bool hidden = l + 1 < params.layers.size();
    acts.push_back(affine_rows(acts.back(), params.layers[l], hidden, exec));
  }
  return acts;
}

Matrix rows_of(const DenseEmbeddingMap& m) { return Matrix(m.pixels(), m.dim(), m.data()); }

}  // namespace

DenseEmbeddingMap student_forward(const DenseEmbeddingMap& features, const StudentParams& params, Exec exec) {
  params.validate();
  if (features.dim() != params.input_dim()) {
    throw Error(ErrorCode::DimMismatch, "feature dim " + std::to_string(features.dim()) + " != student input dim " +
                                            std::to_string(params.input_dim()));
  }
  auto acts = forward_all(rows_of(features), params, exec);
  return DenseEmbeddingMap(features.height(), features.width(), params.output_dim(), std::move(acts.back().data));
}

StudentTrainResult train_student(std::span<const DistillSample> samples, const TrainConfig& cfg,
                                 StudentParams init, Exec exec) {
  cfg.validate();
  init.validate();
  const std::size_t in_dim = init.input_dim();
  const std::size_t out_dim = init.output_dim();

  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.features.dim() != in_dim) throw Error(ErrorCode::DimMismatch, "sample feature dim != student input");
    if (s.teacher.embeddings.dim() != out_dim) throw Error(ErrorCode::DimMismatch, "teacher dim != student output");
    if (s.features.height() != s.teacher.embeddings.height() || s.features.width() != s.teacher.embeddings.width()) {
      throw Error(ErrorCode::DimMismatch, "feature map and teacher volume differ in H x W");
    }
    total += s.features.pixels();
  }

  StudentTrainResult result{std::move(init), {}};
  if (cfg.iterations == 0) return result;

  // Stack every sample into one batch.
  Matrix x(total, in_dim);
  std::vector<double> target(total * out_dim, 0.0);
  std::vector<std::uint8_t> coverage(total, 0);
  std::size_t covered = 0;
  std::size_t offset = 0;
  for (const auto& s : samples) {
    std::copy(s.features.data().begin(), s.features.data().end(), x.data.begin() + offset * in_dim);
    std::copy(s.teacher.embeddings.data().begin(), s.teacher.embeddings.data().end(),
              target.begin() + offset * out_dim);
    std::copy(s.teacher.coverage.begin(), s.teacher.coverage.end(), coverage.begin() + offset);
    offset += s.features.pixels();
  }
  for (auto c : coverage) covered += c ? 1 : 0;
  if (covered == 0) throw Error(ErrorCode::EmptyCoverage, "no sample has a covered pixel");

  auto& params = result.params;
  std::vector<std::size_t> blocks;
  for (const auto& layer : params.layers) {
    blocks.push_back(layer.weight.data.size());
    blocks.push_back(layer.bias.size());
  }
  Optimizer opt(cfg, blocks);
  const double scale = 1.0 / static_cast<double>(covered);
  std::vector<double> terms(total);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto acts = forward_all(x, params, exec);
    Matrix grad(total, out_dim);
    cosine_terms(acts.back().data, target, coverage, out_dim, terms, grad.data.data(), scale, exec);
    const double loss = ordered_sum(terms) * scale;
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "loss diverged at iteration " + std::to_string(it));
    result.loss_history.push_back(loss);

    opt.begin_iteration();
    for (std::size_t l = params.layers.size(); l-- > 0;) {
      auto& layer = params.layers[l];
      const Matrix& a_in = acts[l];
      const std::size_t out = layer.weight.rows, in = layer.weight.cols;

      Matrix d_weight(out, in);
      std::vector<double> d_bias(out, 0.0);
      for_each_index(out, exec, [&](std::size_t o) {
        auto dw = d_weight.row(o);
        double db = 0.0;
        for (std::size_t p = 0; p < total; ++p) {
          const double g = grad(p, o);
          if (g == 0.0) continue;
          db += g;
          const auto a = a_in.row(p);
          for (std::size_t i = 0; i < in; ++i) dw[i] += g * a[i];
        }
        d_bias[o] = db;
      });

      if (l > 0) {
        Matrix prev(total, in);
        for_each_index(total, exec, [&](std::size_t p) {
          auto dst = prev.row(p);
          const auto g = grad.row(p);
          const auto a = a_in.row(p);
          for (std::size_t o = 0; o < out; ++o) {
            if (g[o] == 0.0) continue;
            const auto w = layer.weight.row(o);
            for (std::size_t i = 0; i < in; ++i) dst[i] += g[o] * w[i];
          }
          for (std::size_t i = 0; i < in; ++i) {
            if (a[i] <= 0.0) dst[i] = 0.0;
          }
        });
        grad = std::move(prev);
      }

      opt.step(2 * l, layer.weight.data, d_weight.data);
      opt.step(2 * l + 1, layer.bias, d_bias);
    }

    for (const auto& layer : params.layers) {
      if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
        throw Error(ErrorCode::NonFinite, "parameters diverged at iteration " + std::to_string(it));
      }
    }
  }
  return result;
}

DenseEmbeddingMap make_synthetic_features(const SegmentMaskMap& mask, std::size_t feature_dim, double noise,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::map<std::uint16_t, std::vector<double>> code;
  for (std::uint16_t id : mask.ids) code.try_emplace(id);
  for (auto& [id, v] : code) {
    v.resize(feature_dim);
    for (double& c : v) c = id == 0 ? 0.0 : unit(rng);
  }
  DenseEmbeddingMap out(mask.height, mask.width, feature_dim);
  for (std::size_t p = 0; p < mask.ids.size(); ++p) {
    const auto& base = code[mask.ids[p]];
    auto dst = out.pixel(p);
    for (std::size_t k = 0; k < feature_dim; ++k) dst[k] = base[k] + (noise > 0.0 ? noise * unit(rng) : 0.0);
  }
  return out;
}

}  // namespace dve
