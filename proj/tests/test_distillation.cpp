#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dve/distillation.hpp"
#include "dve/error.hpp"
#include "oracles.hpp"

using namespace dve;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected dve::Error");
  return ErrorCode::InvalidArgument;
}

TeacherVolume full_teacher(DenseEmbeddingMap m) {
  const std::size_t n = m.pixels();
  return TeacherVolume{std::move(m), std::vector<std::uint8_t>(n, 1), n};
}

}  // namespace

TEST_CASE("cosine_distill_loss examples") {
  std::mt19937_64 rng(10);
  const auto t = testing::random_teacher(rng, 3, 4, 5);
  const auto same = cosine_distill_loss(t.embeddings, t);
  CHECK(same.loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(same.covered_pixels == t.covered);

  auto neg = t.embeddings;
  for (double& v : neg.data()) v = -v;
  // Uncovered pixels are zero in the teacher; give them a nonzero prediction.
  for (std::size_t p = 0; p < t.coverage.size(); ++p) {
    if (!t.coverage[p]) neg.pixel(p)[0] = 1.0;
  }
  CHECK(cosine_distill_loss(neg, t).loss == doctest::Approx(2.0).epsilon(1e-12));

  const auto teacher = full_teacher(DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 1}));
  const DenseEmbeddingMap pred(1, 2, 2, {0, 1, 0, 1});
  const auto r = cosine_distill_loss(pred, teacher);
  CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.covered_pixels == 2);
}

TEST_CASE("cosine_distill_loss errors") {
  const auto teacher = full_teacher(DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 1}));
  CHECK(code_of([&] { cosine_distill_loss(DenseEmbeddingMap(1, 2, 3), teacher); }) == ErrorCode::DimMismatch);
  CHECK(code_of([&] { cosine_distill_loss(DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 0}), teacher); }) ==
        ErrorCode::ZeroVector);
  TeacherVolume empty{DenseEmbeddingMap(1, 2, 2), {0, 0}, 0};
  CHECK(code_of([&] { cosine_distill_loss(DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 1}), empty); }) ==
        ErrorCode::EmptyCoverage);
  CHECK(code_of([&] { cosine_distill_loss_grad(DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 1}), empty); }) ==
        ErrorCode::EmptyCoverage);
}

TEST_CASE("uncovered pixels do not contribute, even with zero prediction") {
  TeacherVolume t{DenseEmbeddingMap(1, 2, 2, {1, 0, 0, 0}), {1, 0}, 1};
  const DenseEmbeddingMap pred(1, 2, 2, {1, 1, 0, 0});
  CHECK(cosine_distill_loss(pred, t).loss == doctest::Approx(1.0 - std::sqrt(0.5)));
  const auto g = cosine_distill_loss_grad(pred, t);
  CHECK(g.pixel(1)[0] == 0.0);
  CHECK(g.pixel(1)[1] == 0.0);
}

TEST_CASE("loss matches the per-pixel oracle and stays in [0, 2]") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto t = testing::random_teacher(rng, 4, 4, 8);
    const auto pred = testing::random_map(rng, 4, 4, 8);
    const auto r = cosine_distill_loss(pred, t);
    CHECK(std::abs(r.loss - static_cast<double>(testing::oracle_loss(pred.data(), t))) <= 1e-6);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss <= 2.0);
  }
}

TEST_CASE("loss is invariant to positive per-pixel teacher scaling") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> c(0.01, 100.0);
  for (int i = 0; i < 30; ++i) {
    auto t = testing::random_teacher(rng, 3, 5, 6);
    const auto pred = testing::random_map(rng, 3, 5, 6);
    const double base = cosine_distill_loss(pred, t).loss;
    for (std::size_t p = 0; p < t.coverage.size(); ++p) {
      const double s = c(rng);
      for (double& v : t.embeddings.pixel(p)) v *= s;
    }
    CHECK(std::abs(cosine_distill_loss(pred, t).loss - base) <= 1e-6);
  }
}

TEST_CASE("gradient examples") {
  const auto t = full_teacher(DenseEmbeddingMap(1, 1, 2, {1, 0}));
  const auto g = cosine_distill_loss_grad(DenseEmbeddingMap(1, 1, 2, {0, 1}), t);
  CHECK(g.pixel(0)[0] == doctest::Approx(-1.0));
  CHECK(g.pixel(0)[1] == doctest::Approx(0.0));

  std::mt19937_64 rng(13);
  const auto teacher = full_teacher(testing::random_map(rng, 2, 3, 7));
  auto ray = teacher.embeddings;
  for (double& v : ray.data()) v *= 2.5;
  const auto zero = cosine_distill_loss_grad(ray, teacher);
  for (double v : zero.data()) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("gradient matches central finite differences and is orthogonal to the prediction") {
  std::mt19937_64 rng(14);
  for (int seed = 0; seed < 100; ++seed) {
    const auto t = testing::random_teacher(rng, 3, 3, 5);
    const auto pred = testing::random_map(rng, 3, 3, 5);
    const auto g = cosine_distill_loss_grad(pred, t);
    const auto fd = testing::oracle_fd_gradient(pred, t, 1e-4);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double denom = std::max(std::abs(fd[i]), 1e-6);
      CHECK(std::abs(g.data()[i] - fd[i]) / denom <= 1e-4);
    }
    for (std::size_t p = 0; p < pred.pixels(); ++p) {
      const double gp = dot(g.pixel(p), pred.pixel(p));
      CHECK(std::abs(gp) <= 1e-6 * l2_norm(g.pixel(p)) * l2_norm(pred.pixel(p)) + 1e-15);
    }
  }
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  std::mt19937_64 rng(15);
  const auto t = testing::random_teacher(rng, 16, 16, 24);
  const auto pred = testing::random_map(rng, 16, 16, 24);
  CHECK(cosine_distill_loss(pred, t, Exec::serial).loss == cosine_distill_loss(pred, t, Exec::parallel).loss);
  CHECK(cosine_distill_loss_grad(pred, t, Exec::serial) == cosine_distill_loss_grad(pred, t, Exec::parallel));
}

TEST_CASE("a small gradient-descent step never increases the loss") {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 50; ++i) {
    auto t = testing::random_teacher(rng, 4, 4, 8);
    auto pred = testing::random_map(rng, 4, 4, 8);
    for (std::size_t p = 0; p < pred.pixels(); ++p) {
      l2_normalize_into(pred.pixel(p), pred.pixel(p));
      if (t.coverage[p]) l2_normalize_into(t.embeddings.pixel(p), t.embeddings.pixel(p));
    }
    const double before = cosine_distill_loss(pred, t).loss;
    const auto g = cosine_distill_loss_grad(pred, t);
    for (std::size_t k = 0; k < pred.data().size(); ++k) pred.data()[k] -= 1e-3 * g.data()[k];
    CHECK(cosine_distill_loss(pred, t).loss <= before + 1e-8);
  }
}

TEST_CASE("student_forward examples") {
  std::mt19937_64 rng(17);
  const auto f = testing::random_map(rng, 3, 2, 4);
  StudentParams identity{{DenseLayer{Matrix(4, 4), std::vector<double>(4, 0.0)}}};
  for (std::size_t i = 0; i < 4; ++i) identity.layers[0].weight(i, i) = 1.0;
  CHECK(student_forward(f, identity) == f);

  StudentParams constant{{DenseLayer{Matrix(3, 4), {0.5, -1.0, 2.0}}}};
  const auto out = student_forward(f, constant);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    CHECK(out.pixel(p)[0] == 0.5);
    CHECK(out.pixel(p)[1] == -1.0);
    CHECK(out.pixel(p)[2] == 2.0);
  }

  CHECK(code_of([&] { student_forward(testing::random_map(rng, 1, 1, 3), identity); }) == ErrorCode::DimMismatch);
}

TEST_CASE("student_forward matches the per-pixel matrix oracle") {
  std::mt19937_64 rng(18);
  for (int i = 0; i < 20; ++i) {
    const std::vector<std::size_t> dims{5, 7, 6};
    auto params = init_student(dims, 100 + i);
    for (auto& l : params.layers)
      for (double& b : l.bias) b = std::normal_distribution<double>(0, 0.5)(rng);
    const auto f = testing::random_map(rng, 2, 2, 5);
    const auto out = student_forward(f, params);
    const auto oracle = testing::oracle_student(f, params);
    for (std::size_t k = 0; k < oracle.size(); ++k) CHECK(std::abs(out.data()[k] - oracle[k]) <= 1e-6);
  }
}

TEST_CASE("student_forward has no spatial coupling") {
  std::mt19937_64 rng(19);
  const std::vector<std::size_t> dims{4, 8, 3};
  const auto params = init_student(dims, 7);
  const auto f = testing::random_map(rng, 3, 3, 4);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  DenseEmbeddingMap permuted(3, 3, 4);
  for (std::size_t p = 0; p < 9; ++p) std::copy_n(f.pixel(perm[p]).begin(), 4, permuted.pixel(p).begin());
  const auto a = student_forward(f, params), b = student_forward(permuted, params);
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t k = 0; k < 3; ++k) CHECK(b.pixel(p)[k] == a.pixel(perm[p])[k]);
}

TEST_CASE("train_student degenerate schedules") {
  std::mt19937_64 rng(20);
  const std::vector<std::size_t> dims{4, 3};
  const auto init = init_student(dims, 1);
  std::vector<DistillSample> samples{{testing::random_map(rng, 3, 3, 4), testing::random_teacher(rng, 3, 3, 3)}};

  TrainConfig none;
  none.iterations = 0;
  const auto r0 = train_student(samples, none, init);
  CHECK(r0.loss_history.empty());
  CHECK(r0.params.layers[0].weight == init.layers[0].weight);

  TrainConfig frozen;
  frozen.learning_rate = 0.0;
  frozen.iterations = 5;
  const auto r1 = train_student(samples, frozen, init);
  REQUIRE(r1.loss_history.size() == 5);
  for (double l : r1.loss_history) CHECK(l == r1.loss_history.front());

  TeacherVolume empty{DenseEmbeddingMap(3, 3, 3), std::vector<std::uint8_t>(9, 0), 0};
  std::vector<DistillSample> uncovered{{testing::random_map(rng, 3, 3, 4), empty}};
  CHECK(code_of([&] { train_student(uncovered, TrainConfig{}, init); }) == ErrorCode::EmptyCoverage);

  auto poisoned = init;
  poisoned.layers[0].weight(0, 0) = std::nan("");
  CHECK(code_of([&] { train_student(samples, TrainConfig{}, poisoned); }) == ErrorCode::NonFinite);

  std::vector<DistillSample> wrong{{testing::random_map(rng, 3, 3, 5), testing::random_teacher(rng, 3, 3, 3)}};
  CHECK(code_of([&] { train_student(wrong, TrainConfig{}, init); }) == ErrorCode::DimMismatch);
}

TEST_CASE("train_student is deterministic and serial/parallel identical") {
  std::mt19937_64 rng(21);
  std::vector<DistillSample> samples;
  for (int i = 0; i < 2; ++i) samples.push_back({testing::random_map(rng, 4, 4, 6), testing::random_teacher(rng, 4, 4, 5)});
  const std::vector<std::size_t> dims{6, 10, 5};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::adam;
  cfg.learning_rate = 1e-2;
  cfg.iterations = 30;
  const auto a = train_student(samples, cfg, init_student(dims, 3), Exec::parallel);
  const auto b = train_student(samples, cfg, init_student(dims, 3), Exec::serial);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.params.layers[1].weight == b.params.layers[1].weight);
  CHECK(a.loss_history.back() < a.loss_history.front());
}

TEST_CASE("two-layer backprop matches finite differences of the training loss") {
  // Gradient of the pooled loss w.r.t. one weight, checked through a single
  // plain-descent step: delta_w = -lr * dL/dw.
  std::mt19937_64 rng(22);
  std::vector<DistillSample> samples{{testing::random_map(rng, 3, 3, 4), testing::random_teacher(rng, 3, 3, 3)}};
  const std::vector<std::size_t> dims{4, 6, 3};
  const auto init = init_student(dims, 9);
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.iterations = 1;
  const auto stepped = train_student(samples, cfg, init);

  const auto loss_at = [&](const StudentParams& p) {
    return static_cast<double>(testing::oracle_loss(student_forward(samples[0].features, p).data(), samples[0].teacher));
  };
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < init.layers[l].weight.data.size(); i += 5) {
      auto up = init, down = init;
      up.layers[l].weight.data[i] += 1e-5;
      down.layers[l].weight.data[i] -= 1e-5;
      const double fd = (loss_at(up) - loss_at(down)) / 2e-5;
      const double analytic = init.layers[l].weight.data[i] - stepped.params.layers[l].weight.data[i];
      CHECK(std::abs(analytic - fd) <= 1e-6 + 1e-4 * std::abs(fd));
    }
  }
}

TEST_CASE("make_synthetic_features is deterministic and segment-structured") {
  const SegmentMaskMap mask(2, 3, {1, 1, 2, 0, 2, 1});
  const auto a = make_synthetic_features(mask, 8, 0.0, 5);
  const auto b = make_synthetic_features(mask, 8, 0.0, 5);
  CHECK(a == b);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(a.pixel(0)[k] == a.pixel(1)[k]);
    CHECK(a.pixel(2)[k] == a.pixel(4)[k]);
    CHECK(a.pixel(3)[k] == 0.0);
  }
}
