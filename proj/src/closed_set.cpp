#include "dve/closed_set.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "dve/error.hpp"

namespace dve {

LabelMap::LabelMap(std::size_t h, std::size_t w, std::vector<std::uint16_t> values)
    : height(h), width(w), labels(std::move(values)) {
  if (labels.size() != h * w) throw Error(ErrorCode::ShapeMismatch, "label count does not match H*W");
}

// ---------------------------------------------------------------------------
// References

ReferenceSet ReferenceSet::from_rows(std::vector<std::string> class_names, const Matrix& rows) {
  if (class_names.size() != rows.rows) throw Error(ErrorCode::DimMismatch, "one name per reference row required");
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size()) {
    throw Error(ErrorCode::InvalidArgument, "class names must be unique");
  }
  return from_named_rows(class_names, rows);
}

ReferenceSet ReferenceSet::from_named_rows(std::span<const std::string> names, const Matrix& rows) {
  if (names.size() != rows.rows) throw Error(ErrorCode::DimMismatch, "one name per reference row required");
  if (rows.rows == 0) throw Error(ErrorCode::InvalidArgument, "reference set needs at least one row");
  ReferenceSet out;
  out.rows_ = Matrix(rows.rows, rows.cols);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < rows.rows; ++r) {
    l2_normalize_into(rows.row(r), out.rows_.row(r));
    auto [it, inserted] = index.try_emplace(names[r], out.class_names_.size());
    if (inserted) out.class_names_.push_back(names[r]);
    out.row_class_.push_back(it->second);
  }
  return out;
}

ReferenceSet visual_mean_references(std::span<const SegmentRecord> records, std::size_t num_classes,
                                    std::span<const std::string> names, EmbeddingSource source) {
  if (num_classes == 0) throw Error(ErrorCode::InvalidArgument, "need at least one class");
  if (!names.empty() && names.size() != num_classes) {
    throw Error(ErrorCode::DimMismatch, "class name count != number of classes");
  }
  std::size_t dim = 0;
  Matrix sums;
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& r : records) {
    if (!r.class_id || r.is_global()) continue;
    const std::size_t c = *r.class_id;
    if (c >= num_classes) continue;
    const EmbeddingVector* e = &r.raw_embedding;
    if (source == EmbeddingSource::refined) {
      if (!r.refined_embedding) continue;
      e = &*r.refined_embedding;
    }
    if (sums.rows == 0) {
      dim = e->dim();
      sums = Matrix(num_classes, dim);
    } else if (e->dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "segment embeddings differ in D");
    }
    auto dst = sums.row(c);
    for (std::size_t k = 0; k < dim; ++k) dst[k] += (*e)[k];
    ++counts[c];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw Error(ErrorCode::EmptyClass, std::to_string(c));
  }
  std::vector<std::string> class_names;
  for (std::size_t c = 0; c < num_classes; ++c) {
    class_names.push_back(names.empty() ? "class_" + std::to_string(c) : names[c]);
    auto row = sums.row(c);
    for (double& v : row) v /= static_cast<double>(counts[c]);
    if (l2_norm(row) < kZeroNorm) throw Error(ErrorCode::ZeroVector, "mean of class " + std::to_string(c));
  }
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size()) {
    throw Error(ErrorCode::InvalidArgument, "class names must be unique");
  }
  return ReferenceSet::from_rows(std::move(class_names), sums);
}

Classification classify_argmax(const DenseEmbeddingMap& map, const ReferenceSet& refs, Exec exec) {
  if (map.dim() != refs.dim()) {
    throw Error(ErrorCode::DimMismatch, "map D=" + std::to_string(map.dim()) + " vs references D=" +
                                            std::to_string(refs.dim()));
  }
  const std::size_t n = map.pixels();
  Classification out{LabelMap(map.height(), map.width(), kIgnoreLabel), std::vector<double>(n, 0.0), 0};
  const Matrix& rows = refs.rows();
  const auto& row_class = refs.row_class();
  std::vector<std::uint8_t> zero(n, 0);

  for_each_index(n, exec, [&](std::size_t p) {
    const auto x = map.pixel(p);
    const double nx = l2_norm(x);
    if (nx < kZeroNorm) {
      zero[p] = 1;
      return;
    }
    // Per-class max over rows, then lowest-index arg-max over classes.
    std::vector<double> score(refs.classes(), -2.0);
    for (std::size_t r = 0; r < rows.rows; ++r) {
      const auto ref = rows.row(r);
      double d = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) d += x[k] * ref[k];
      const double cos = std::clamp(d / nx, -1.0, 1.0);
      double& s = score[row_class[r]];
      s = std::max(s, cos);
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < score.size(); ++c) {
      if (score[c] > score[best]) best = c;
    }
    out.labels.labels[p] = static_cast<std::uint16_t>(best);
    out.similarity[p] = score[best];
  });
  for (auto z : zero) out.zero_pixels += z;
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe

void ProbeWeights::validate() const {
  if (weight.rows == 0 || weight.cols == 0) throw Error(ErrorCode::InvalidArgument, "empty probe");
  if (bias.size() != weight.rows) throw Error(ErrorCode::DimMismatch, "probe bias length != classes");
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weight.data.begin(), weight.data.end(), finite) || !std::all_of(bias.begin(), bias.end(), finite)) {
    throw Error(ErrorCode::NonFinite, "probe has non-finite entries");
  }
}

std::size_t probe_iterations_for(std::size_t distill_iterations) noexcept {
  return std::max<std::size_t>(1, distill_iterations / 10);
}

TrainConfig default_probe_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.iterations = 100;
  cfg.optimizer = OptimizerKind::gradient_descent;
  return cfg;
}

std::uint16_t probe_classify(std::span<const double> x, const ProbeWeights& w) {
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < w.classes(); ++c) {
    const auto row = w.weight.row(c);
    double s = w.bias[c];
    for (std::size_t k = 0; k < x.size(); ++k) s += row[k] * x[k];
    if (c == 0 || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return static_cast<std::uint16_t>(best);
}

LabelMap probe_predict(const DenseEmbeddingMap& map, const ProbeWeights& w, Exec exec) {
  w.validate();
  if (map.dim() != w.dim()) throw Error(ErrorCode::DimMismatch, "map D does not match probe D");
  LabelMap out(map.height(), map.width(), kIgnoreLabel);
  for_each_index(map.pixels(), exec, [&](std::size_t p) { out.labels[p] = probe_classify(map.pixel(p), w); });
  return out;
}

namespace {

struct ProbeBatch {
  Matrix x;                          // N x D, labeled pixels only
  std::vector<std::uint16_t> label;  // N
};

ProbeBatch gather_labeled(std::span<const LabeledSample> samples, std::size_t num_classes, std::size_t dim) {
  ProbeBatch batch;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.map.dim() != dim) throw Error(ErrorCode::DimMismatch, "sample embedding dims differ");
    if (s.labels.height != s.map.height() || s.labels.width != s.map.width()) {
      throw Error(ErrorCode::ShapeMismatch, "label map and embedding map differ in H x W");
    }
    for (auto l : s.labels.labels) {
      if (l == kIgnoreLabel) continue;
      if (l >= num_classes) throw Error(ErrorCode::DimMismatch, "label " + std::to_string(l) + " >= C");
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::NoLabeledPixels, "every pixel is ignore");
  batch.x = Matrix(n, dim);
  batch.label.reserve(n);
  std::size_t i = 0;
  for (const auto& s : samples) {
    for (std::size_t p = 0; p < s.map.pixels(); ++p) {
      if (s.labels.labels[p] == kIgnoreLabel) continue;
      const auto src = s.map.pixel(p);
      std::copy(src.begin(), src.end(), batch.x.row(i).begin());
      batch.label.push_back(s.labels.labels[p]);
      ++i;
    }
  }
  return batch;
}

/// Softmax cross-entropy per row; fills d loss / d logits (already divided by N)
/// when `dlogits` is non-null. Returns the mean loss.
double softmax_ce(const ProbeBatch& b, const ProbeWeights& w, Matrix* dlogits, Exec exec) {
  const std::size_t n = b.x.rows, classes = w.classes();
  std::vector<double> terms(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for_each_index(n, exec, [&](std::size_t p) {
    const auto x = b.x.row(p);
    std::vector<double> z(classes);
    double zmax = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      const auto row = w.weight.row(c);
      double s = w.bias[c];
      for (std::size_t k = 0; k < x.size(); ++k) s += row[k] * x[k];
      z[c] = s;
      zmax = std::max(zmax, s);
    }
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_sum = zmax + std::log(sum);
    terms[p] = log_sum - z[b.label[p]];
    if (dlogits) {
      auto d = dlogits->row(p);
      for (std::size_t c = 0; c < classes; ++c) {
        d[c] = (std::exp(z[c] - log_sum) - (c == b.label[p] ? 1.0 : 0.0)) * inv_n;
      }
    }
  });
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc * inv_n;
}

}  // namespace

double probe_cross_entropy(std::span<const LabeledSample> samples, const ProbeWeights& w, Exec exec) {
  w.validate();
  const auto batch = gather_labeled(samples, w.classes(), w.dim());
  return softmax_ce(batch, w, nullptr, exec);
}

ProbeTrainResult train_linear_probe(std::span<const LabeledSample> samples, std::size_t num_classes,
                                    const TrainConfig& cfg, Exec exec) {
  cfg.validate();
  if (num_classes == 0 || num_classes >= kIgnoreLabel) throw Error(ErrorCode::InvalidArgument, "bad class count");
  if (samples.empty()) throw Error(ErrorCode::NoLabeledPixels, "no samples");
  const std::size_t dim = samples.front().map.dim();
  const auto batch = gather_labeled(samples, num_classes, dim);

  ProbeTrainResult result;
  auto& w = result.weights;
  w.weight = Matrix(num_classes, dim);
  w.bias.assign(num_classes, 0.0);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  for (double& v : w.weight.data) v = init(rng);

  Optimizer opt(cfg, {w.weight.data.size(), w.bias.size()});
  const std::size_t n = batch.x.rows;
  Matrix dlogits(n, num_classes);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double loss = softmax_ce(batch, w, &dlogits, exec);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "probe loss diverged at " + std::to_string(it));
    result.loss_history.push_back(loss);

    Matrix dw(num_classes, dim);
    std::vector<double> db(num_classes, 0.0);
    for_each_index(num_classes, exec, [&](std::size_t c) {
      auto row = dw.row(c);
      double bsum = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        const double g = dlogits(p, c);
        bsum += g;
        const auto x = batch.x.row(p);
        for (std::size_t k = 0; k < dim; ++k) row[k] += g * x[k];
      }
      db[c] = bsum;
    });
    opt.begin_iteration();
    opt.step(0, w.weight.data, dw.data);
    opt.step(1, w.bias, db);
  }
  w.validate();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Correctly rounded num / den for den < 2^63: both operands are exact in
// double only below 2^53, so fall back to long double beyond that.
double exact_ratio(std::uint64_t num, std::uint64_t den) {
  if (num < (std::uint64_t{1} << 53) && den < (std::uint64_t{1} << 53)) {
    return static_cast<double>(num) / static_cast<double>(den);
  }
  return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

}  // namespace

MiouReport evaluate_miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes,
                         std::span<const std::uint16_t> excluded) {
  if (pred.height != gt.height || pred.width != gt.width || pred.labels.size() != gt.labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in H x W");
  }
  if (num_classes == 0 || num_classes >= kIgnoreLabel) throw Error(ErrorCode::InvalidArgument, "bad class count");
  std::vector<std::uint8_t> is_excluded(num_classes, 0);
  for (auto c : excluded) {
    if (c < num_classes) is_excluded[c] = 1;
  }

  // confusion[gt][pred]; an extra column collects ignore predictions.
  const std::size_t cols = num_classes + 1;
  std::vector<std::uint64_t> confusion(num_classes * cols, 0);
  MiouReport report;
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    const auto g = gt.labels[p], q = pred.labels[p];
    if (g != kIgnoreLabel && g >= num_classes) throw Error(ErrorCode::DimMismatch, "gt label >= C");
    if (q != kIgnoreLabel && q >= num_classes) throw Error(ErrorCode::DimMismatch, "predicted label >= C");
    if (g == kIgnoreLabel || is_excluded[g]) continue;
    ++confusion[g * cols + (q == kIgnoreLabel ? num_classes : q)];
    ++report.evaluated_pixels;
  }
  if (report.evaluated_pixels == 0) throw Error(ErrorCode::NoLabeledPixels, "no evaluable ground-truth pixel");

  // exact fraction while it fits, long double after
  using u128 = unsigned __int128;
  u128 num = 0, den = 1;
  bool exact = true;
  long double sum = 0.0L;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (is_excluded[c]) {
      report.excluded_classes.push_back(static_cast<std::uint16_t>(c));
      continue;
    }
    std::uint64_t tp = confusion[c * cols + c], row = 0, col = 0;
    for (std::size_t k = 0; k < cols; ++k) row += confusion[c * cols + k];
    for (std::size_t k = 0; k < num_classes; ++k) col += confusion[k * cols + c];
    const std::uint64_t uni = row + col - tp;
    ClassIou entry{static_cast<std::uint16_t>(c), std::nullopt};
    if (uni > 0) {
      entry.iou = static_cast<double>(tp) / static_cast<double>(uni);
      sum += static_cast<long double>(tp) / static_cast<long double>(uni);
      ++defined;
      if (exact) {
        const u128 g = std::gcd(den, static_cast<u128>(uni));
        const u128 scale = static_cast<u128>(uni) / g;
        if (den > (u128{1} << 62) / scale) {
          exact = false;
        } else {
          num = num * scale + static_cast<u128>(tp) * (den / g);
          den *= scale;
          const u128 r = std::gcd(num, den);
          num /= r;
          den /= r;
        }
      }
    }
    report.per_class.push_back(entry);
  }
  if (defined == 0) {
    report.mean_iou = 0.0;
  } else if (exact && den <= (u128{1} << 62) / defined) {
    den *= defined;
    const u128 r = std::gcd(num, den);
    report.mean_iou = exact_ratio(static_cast<std::uint64_t>(num / r), static_cast<std::uint64_t>(den / r));
  } else {
    report.mean_iou = static_cast<double>(sum / static_cast<long double>(defined));
  }
  return report;
}

double pixel_accuracy(const LabelMap& pred, const LabelMap& gt) {
  if (pred.labels.size() != gt.labels.size()) throw Error(ErrorCode::ShapeMismatch, "label maps differ in size");
  std::size_t total = 0, hit = 0;
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    if (gt.labels[p] == kIgnoreLabel) continue;
    ++total;
    hit += pred.labels[p] == gt.labels[p] ? 1 : 0;
  }
  if (total == 0) throw Error(ErrorCode::NoLabeledPixels, "no labeled pixel");
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace dve
