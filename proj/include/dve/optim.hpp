#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dve {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) noexcept { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class OptimizerKind { gradient_descent, adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t iterations = 100;
  OptimizerKind optimizer = OptimizerKind::gradient_descent;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Applies one update per parameter block per iteration. Weight decay is
/// decoupled (p -= lr * wd * p) for both optimizer kinds.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<std::size_t> block_sizes);

  /// Call once per iteration before stepping the blocks.
  void begin_iteration() noexcept { ++t_; }
  void step(std::size_t block, std::span<double> params, std::span<const double> grad);

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace dve
