#include "dve/optim.hpp"

#include <cmath>
#include <string>

#include "dve/error.hpp"

namespace dve {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw Error(ErrorCode::ShapeMismatch, "matrix data length does not match rows*cols");
}

void TrainConfig::validate() const {
  // Zero is accepted: a frozen run still produces a loss history.
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::InvalidArgument, "learning_rate must be finite and non-negative");
  }
  if (weight_decay < 0.0) throw Error(ErrorCode::InvalidArgument, "weight_decay must be non-negative");
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<std::size_t> block_sizes) : cfg_(cfg) {
  if (cfg_.optimizer == OptimizerKind::adam) {
    for (std::size_t n : block_sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }
}

void Optimizer::step(std::size_t block, std::span<double> params, std::span<const double> grad) {
  const double lr = cfg_.learning_rate;
  const double decay = lr * cfg_.weight_decay;
  if (cfg_.optimizer == OptimizerKind::gradient_descent) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i] + decay * params[i];
    return;
  }
  auto& m = m_.at(block);
  auto& v = v_.at(block);
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + cfg_.epsilon) + decay * params[i];
  }
}

}  // namespace dve
