#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sfl/optim.hpp"
#include "sfl/rng.hpp"

using namespace sfl;

namespace {

ModelParams scalar_params(double w, double b) {
  return ModelParams{{Layer{Matrix::Constant(1, 1, w), Vector::Constant(1, b)}}};
}

ModelParams random_like(const ModelParams& p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  ModelParams q = p;
  for (Layer& l : q.layers) {
    for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = normal(rng);
  }
  return q;
}

}  // namespace

TEST_CASE("cosine_lr examples") {
  CHECK(cosine_lr(0, 100, 0.3) == 0.3);
  CHECK(cosine_lr(100, 100, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(100, 100, 0.3)) < 1e-15);
  CHECK(cosine_lr(50, 100, 0.3) == doctest::Approx(0.15).epsilon(1e-14));
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.3), DomainError);
  CHECK_THROWS_AS(cosine_lr(-1, 100, 0.3), DomainError);
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.3), DomainError);
}

TEST_CASE("linear_lr examples") {
  CHECK(linear_lr(0, 40, 2.0) == 2.0);
  CHECK(linear_lr(40, 40, 2.0) == 0.0);
  CHECK(linear_lr(10, 40, 2.0) == 1.5);
  CHECK_THROWS_AS(linear_lr(41, 40, 2.0), DomainError);
}

TEST_CASE("schedules are monotone nonincreasing") {
  for (int T : {1, 7, 100}) {
    double prev_c = INFINITY, prev_l = INFINITY;
    for (int t = 0; t <= T; ++t) {
      const double c = cosine_lr(t, T, 1.0), l = linear_lr(t, T, 1.0);
      CHECK(c <= prev_c);
      CHECK(l <= prev_l);
      prev_c = c;
      prev_l = l;
    }
  }
  OptimizerConfig cfg;
  cfg.schedule = Schedule::Constant;
  cfg.total_steps = 10;
  CHECK(scheduled_lr(cfg, 7) == cfg.lr0);
}

TEST_CASE("sgd_step examples") {
  ModelParams p = scalar_params(1.0, 1.0);
  sgd_step(p, scalar_params(0.5, 0.5), 0.1, 0.0);
  CHECK(p.layers[0].W(0, 0) == doctest::Approx(0.95).epsilon(1e-15));

  p = scalar_params(1.0, 1.0);
  sgd_step(p, scalar_params(0.0, 0.0), 0.1, 0.1);
  CHECK(p.layers[0].W(0, 0) == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(p.layers[0].b(0) == 1.0);  // biases are not decayed
}

TEST_CASE("sgd_step matches a scalar loop") {
  const ModelParams base = random_like(ModelParams{{Layer{Matrix(4, 3), Vector(4)}, Layer{Matrix(2, 4), Vector(2)}}}, 1);
  const ModelParams g = random_like(base, 2);
  ModelParams p = base;
  const double lr = 0.037, wd = 0.003;
  sgd_step(p, g, lr, wd);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < p.layers[l].W.size(); ++i) {
      const double w = base.layers[l].W.data()[i];
      CHECK(std::abs(p.layers[l].W.data()[i] - (w - lr * (g.layers[l].W.data()[i] + wd * w))) <= 1e-15);
    }
    for (Eigen::Index i = 0; i < p.layers[l].b.size(); ++i) {
      CHECK(std::abs(p.layers[l].b(i) - (base.layers[l].b(i) - lr * g.layers[l].b(i))) <= 1e-15);
    }
  }

  ModelParams q = base;
  sgd_step(q, g, 0.0, 0.5);
  CHECK(q.layers[0].W == base.layers[0].W);
  CHECK(q.layers[1].b == base.layers[1].b);
}

TEST_CASE("sgd_step rejects bad gradients") {
  ModelParams p = scalar_params(1.0, 0.0);
  CHECK_THROWS(sgd_step(p, scalar_params(NAN, 0.0), 0.1, 0.0));
  CHECK_THROWS(sgd_step(p, ModelParams{{Layer{Matrix::Zero(1, 2), Vector::Zero(1)}}}, 0.1, 0.0));
}

TEST_CASE("adamw_step examples") {
  for (double g : {0.3, -2.0, 1e-3}) {
    ModelParams p = scalar_params(1.0, 0.0);
    AdamState st = AdamState::zeros_like(p);
    adamw_step(st, p, scalar_params(g, g), 0.01, 0.0);
    CHECK(std::abs(1.0 - p.layers[0].W(0, 0)) == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(st.step == 1);
  }
  ModelParams p = scalar_params(2.0, 2.0);
  AdamState st = AdamState::zeros_like(p);
  adamw_step(st, p, scalar_params(0.0, 0.0), 0.01, 0.1);
  CHECK(p.layers[0].W(0, 0) == doctest::Approx(0.999 * 2.0).epsilon(1e-15));
  CHECK(p.layers[0].b(0) == 2.0);
}

TEST_CASE("adamw five-step trace on a quadratic") {
  // f(w) = a/2 (w - c)^2 on both W and b, stepped by hand.
  const double a = 2.0, c = 3.0, lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ModelParams p = scalar_params(1.0, -1.0);
  AdamState st = AdamState::zeros_like(p);
  double w = 1.0, b = -1.0, mw = 0, vw = 0, mb = 0, vb = 0;
  for (int t = 1; t <= 5; ++t) {
    const double gw = a * (w - c), gb = a * (b - c);
    adamw_step(st, p, scalar_params(gw, gb), lr, wd, b1, b2, eps);

    mw = b1 * mw + (1 - b1) * gw;
    vw = b2 * vw + (1 - b2) * gw * gw;
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb * gb;
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    w = w - lr * (mw / c1) / (std::sqrt(vw / c2) + eps) - lr * wd * w;
    b = b - lr * (mb / c1) / (std::sqrt(vb / c2) + eps);

    CHECK(std::abs(p.layers[0].W(0, 0) - w) < 1e-10);
    CHECK(std::abs(p.layers[0].b(0) - b) < 1e-10);
    CHECK(st.v.layers[0].W(0, 0) >= 0.0);
  }
}

TEST_CASE("identical inputs give identical trajectories") {
  const ModelParams base = random_like(ModelParams{{Layer{Matrix(3, 3), Vector(3)}}}, 5);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::AdamW;
  cfg.weight_decay = 0.0;
  cfg.total_steps = 10;
  ModelParams p1 = base, p2 = base;
  Optimizer o1(cfg, p1), o2(cfg, p2);
  for (int t = 0; t < 10; ++t) {
    const ModelParams g = random_like(base, 100 + t);
    o1.step(p1, g);
    o2.step(p2, g);
  }
  CHECK(p1.layers[0].W == p2.layers[0].W);
  CHECK(o1.steps_taken() == 10);
  CHECK(o1.current_lr() == 0.0);
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig cfg;
  cfg.validate();
  cfg.lr0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(optimizer_kind_from_string(to_string(OptimizerKind::AdamW)) == OptimizerKind::AdamW);
  CHECK(schedule_from_string(to_string(Schedule::Linear)) == Schedule::Linear);
  CHECK_THROWS_AS(schedule_from_string("step"), ConfigError);
}
