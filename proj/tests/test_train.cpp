#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "sfl/rng.hpp"
#include "sfl/train.hpp"

using namespace sfl;

namespace {

// K classes x S spurious values with the given per-group counts (LabelCrossSpurious order).
GroupedDataset grouped(const std::vector<int>& counts, int K, int S, int d = 2, std::uint64_t seed = 0,
                       double margin = 1.0, GroupMode mode = GroupMode::LabelCrossSpurious) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Labels y, s;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    for (int k = 0; k < counts[g]; ++k) {
      y.push_back(static_cast<int>(g) / S);
      s.push_back(static_cast<int>(g) % S);
    }
  }
  Matrix X(static_cast<Eigen::Index>(y.size()), d);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = normal(rng) + (j == y[i] ? margin : 0.0);
  }
  return GroupedDataset::make(X, y, s, mode, K, S);
}

TrainConfig small_config(Method m, int epochs = 3) {
  TrainConfig c;
  c.method = m;
  c.epochs = epochs;
  c.batch_size = 16;
  c.hidden = {8};
  c.optimizer.lr0 = 0.05;
  if (m == Method::GDRO) c.gdro = GdroConfig{};
  return c;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].W != b.layers[l].W || a.layers[l].b != b.layers[l].b) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("ERM sampler is a permutation per epoch") {
  const GroupedDataset ds = grouped({4, 6}, 2, 1);
  const Sampler s = make_sampler(Method::ERM, ds, 3);
  for (int e = 0; e < 3; ++e) {
    Index idx = s.epoch(e);
    std::sort(idx.begin(), idx.end());
    Index want(10);
    std::iota(want.begin(), want.end(), 0);
    CHECK(idx == want);
  }
  CHECK(s.epoch(0) != s.epoch(1));
  CHECK(s.epoch(2) == make_sampler(Method::ERM, ds, 3).epoch(2));
}

TEST_CASE("RWY draws classes uniformly") {
  const GroupedDataset ds = grouped({9000, 1000}, 2, 1);
  const Index idx = make_sampler(Method::RWY, ds, 11).epoch(0);
  REQUIRE(idx.size() == 10000);
  int zero = 0;
  for (int i : idx) zero += ds.y[i] == 0;
  const double freq = zero / 10000.0;
  CHECK(freq >= 0.48);
  CHECK(freq <= 0.52);
}

TEST_CASE("RWG draws groups uniformly and rows uniformly inside a group") {
  const GroupedDataset ds = grouped({700, 40, 10, 250}, 2, 2);
  const Sampler s = make_sampler(Method::RWG, ds, 5);
  std::vector<int> per_group(4, 0);
  std::vector<int> per_row(ds.size(), 0);
  const int epochs = 50;
  for (int e = 0; e < epochs; ++e) {
    for (int i : s.epoch(e)) {
      ++per_group[ds.g[i]];
      ++per_row[i];
    }
  }
  const double n = epochs * ds.size();
  for (int c : per_group) CHECK(std::abs(c / n - 0.25) < 4.0 * std::sqrt(0.25 * 0.75 / n));
  // Rows of the smallest group: each expected n / 4 / 10 times.
  for (int i = 0; i < ds.size(); ++i) {
    if (ds.g[i] != 2) continue;
    const double p = 1.0 / 40.0;
    CHECK(std::abs(per_row[i] - n * p) < 4.0 * std::sqrt(n * p * (1 - p)));
  }
}

TEST_CASE("RWG with one group samples rows uniformly with replacement") {
  const GroupedDataset ds = grouped({20}, 1, 1);
  const Sampler s = make_sampler(Method::RWG, ds, 0);
  std::vector<int> count(20, 0);
  bool repeated = false;
  for (int e = 0; e < 500; ++e) {
    const Index idx = s.epoch(e);
    repeated = repeated || std::set<int>(idx.begin(), idx.end()).size() < idx.size();
    for (int i : idx) ++count[i];
  }
  CHECK(repeated);
  for (int c : count) CHECK(std::abs(c - 500.0) < 4.0 * std::sqrt(500.0 * 0.95));
}

TEST_CASE("reweighting samplers reject empty buckets") {
  CHECK_THROWS_AS(make_sampler(Method::RWG, grouped({5, 0, 3, 2}, 2, 2), 0), ConfigError);
  CHECK_THROWS_AS(make_sampler(Method::RWY, grouped({5, 0}, 2, 1), 0), ConfigError);
  CHECK_NOTHROW(make_sampler(Method::ERM, grouped({5, 0, 3, 2}, 2, 2), 0));
}

TEST_CASE("adjusted_group_loss examples") {
  Vector l(2);
  l << 0.5, 0.3;
  const Vector a = adjusted_group_loss(l, {100, 4}, 1.0);
  CHECK(a(0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(a(1) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(adjusted_group_loss(l, {100, 4}, 0.0) == l);
  // Crossover at C = 0.2 / (1/2 - 1/10) = 0.5.
  Eigen::Index arg = 0;
  adjusted_group_loss(l, {100, 4}, 0.49).maxCoeff(&arg);
  CHECK(arg == 0);
  adjusted_group_loss(l, {100, 4}, 0.51).maxCoeff(&arg);
  CHECK(arg == 1);
  const Vector at = adjusted_group_loss(l, {100, 4}, 0.5);
  CHECK(std::abs(at(0) - at(1)) < 1e-15);
  CHECK_THROWS_AS(adjusted_group_loss(l, {100, 0}, 1.0), DomainError);
}

TEST_CASE("gdro_update examples") {
  Vector q(3);
  q << 0.2, 0.5, 0.3;
  Vector same = Vector::Constant(3, 0.7);
  CHECK((gdro_update(q, same, 0.4) - q).cwiseAbs().maxCoeff() < 1e-15);
  Vector l(3);
  l << 1.0, -2.0, 0.3;
  CHECK((gdro_update(q, l, 0.0) - q).cwiseAbs().maxCoeff() < 1e-15);

  Vector h(2), lh(2);
  h << 0.5, 0.5;
  lh << 1.0, 0.0;
  const Vector out = gdro_update(h, lh, std::numbers::ln2);
  CHECK(out(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(out(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  Vector bad = l;
  bad(1) = NAN;
  CHECK_THROWS_AS(gdro_update(q, bad, 0.1), DomainError);
}

TEST_CASE("gdro_update stays on the simplex") {
  Rng rng(1);
  std::normal_distribution<double> normal(0.0, 5.0);
  Vector q = Vector::Constant(5, 0.2);
  for (int t = 0; t < 1000; ++t) {
    Vector l(5);
    for (int g = 0; g < 5; ++g) l(g) = normal(rng);
    q = gdro_update(q, l, 0.3);
    CHECK(std::abs(q.sum() - 1.0) < 1e-12);
    CHECK((q.array() >= 0.0).all());
  }
  // Large losses do not overflow.
  Vector huge(2);
  huge << 1e6, 0.0;
  const Vector r = gdro_update(Vector::Constant(2, 0.5), huge, 1.0);
  CHECK(r.allFinite());
  CHECK(r(0) == 1.0);
}

TEST_CASE("train: GDRO with one group reproduces ERM exactly") {
  // Grouping on a constant attribute leaves a single group.
  const GroupedDataset tr = grouped({60, 40}, 2, 1, 3, 1, 1.0, GroupMode::SpuriousOnly);
  const GroupedDataset va = grouped({20, 20}, 2, 1, 3, 2, 1.0, GroupMode::SpuriousOnly);
  REQUIRE(tr.groups() == 1);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const ModelParams init = init_mlp({3, 8, 2}, seed + 10);
    TrainConfig erm = small_config(Method::ERM);
    erm.seed = seed;
    TrainConfig gdro = small_config(Method::GDRO);
    gdro.seed = seed;
    gdro.gdro = GdroConfig{2.0, 0.7};
    std::vector<ModelParams> a, b;
    const TrainResult ra = train(tr, va, init, erm, [&](int, const ModelParams& p) { a.push_back(p); });
    const TrainResult rb = train(tr, va, init, gdro, [&](int, const ModelParams& p) { b.push_back(p); });
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(same_params(a[k], b[k]));
    CHECK(same_params(ra.final_params, rb.final_params));
    CHECK(rb.final_q.size() == 1);
  }
}

TEST_CASE("train: zero epochs returns the initial parameters") {
  const GroupedDataset tr = grouped({10, 10}, 2, 1);
  const ModelParams init = init_mlp({2, 4, 2}, 3);
  TrainConfig c = small_config(Method::ERM, 0);
  c.early_stop = true;
  const TrainResult r = train(tr, tr, init, c);
  CHECK(same_params(r.final_params, init));
  CHECK(same_params(r.best_params, init));
  CHECK(r.history.empty());
  CHECK(r.steps == 0);
}

TEST_CASE("train: separable toy problem reaches full training accuracy") {
  const GroupedDataset tr = grouped({100, 100}, 2, 1, 2, 4, 6.0);
  // Separability oracle: scan directions and thresholds for a separating line.
  bool separable = false;
  for (int a = 0; a < 3600 && !separable; ++a) {
    const double th = a * std::numbers::pi / 1800.0;
    const Eigen::Vector2d u(std::cos(th), std::sin(th));
    const Vector proj = tr.X * u;
    double max0 = -INFINITY, min1 = INFINITY;
    for (int i = 0; i < tr.size(); ++i) {
      if (tr.y[i] == 0) max0 = std::max(max0, proj(i));
      else min1 = std::min(min1, proj(i));
    }
    separable = max0 < min1;
  }
  REQUIRE(separable);

  TrainConfig c = small_config(Method::ERM, 100);
  c.optimizer.lr0 = 0.05;
  const TrainResult r = train(tr, tr, init_mlp({2, 8, 2}, 5), c);
  const Labels pred = argmax_rows(predict_logits(r.final_params, tr.X));
  int correct = 0;
  for (int i = 0; i < tr.size(); ++i) correct += pred[i] == tr.y[i];
  CHECK(correct == tr.size());
}

TEST_CASE("train: history, early stopping and determinism") {
  const GroupedDataset tr = grouped({150, 20, 10, 120}, 2, 2, 4, 6);
  const GroupedDataset va = grouped({40, 30, 30, 40}, 2, 2, 4, 7);
  TrainConfig c = small_config(Method::ERM, 7);
  c.eval_every = 3;
  c.early_stop = true;
  const ModelParams init = init_mlp({4, 8, 2}, 8);
  const TrainResult r = train(tr, va, init, c);
  REQUIRE(r.history.size() == 3);  // epochs 3, 6, 7
  CHECK(r.history[0].epoch == 3);
  CHECK(r.history[2].epoch == 7);
  double best = -1.0;
  int best_epoch = 0;
  for (const EvalRecord& h : r.history) {
    if (h.val_wga > best) {
      best = h.val_wga;
      best_epoch = h.epoch;
    }
    CHECK(h.val_group_acc.size() == 4);
    CHECK(h.val_group_loss.size() == 4);
    CHECK(h.val_wga <= h.val_mean_acc + 1e-12);
  }
  CHECK(r.best_epoch == best_epoch);
  CHECK(r.history.back().val_wga <= best);
  CHECK(r.steps == 7 * ((300 + 15) / 16));

  const TrainResult again = train(tr, va, init, c);
  CHECK(same_params(r.final_params, again.final_params));
  CHECK(same_params(r.best_params, again.best_params));

  for (Method m : {Method::RWY, Method::RWG, Method::GDRO}) {
    TrainConfig cm = small_config(m, 2);
    const TrainResult a = train(tr, va, init, cm);
    const TrainResult b = train(tr, va, init, cm);
    CHECK(same_params(a.final_params, b.final_params));
  }
}

TEST_CASE("train: GDRO group weights stay on the simplex and favour the hard group") {
  const GroupedDataset tr = grouped({200, 20, 10, 150}, 2, 2, 4, 9, 0.5);
  TrainConfig c = small_config(Method::GDRO, 5);
  c.gdro = GdroConfig{0.0, 0.5};
  const TrainResult r = train(tr, tr, init_mlp({4, 8, 2}, 1), c);
  REQUIRE(r.final_q.size() == 4);
  CHECK(std::abs(r.final_q.sum() - 1.0) < 1e-12);
  CHECK((r.final_q.array() >= 0.0).all());
}

TEST_CASE("train: divergence is reported") {
  const GroupedDataset tr = grouped({20, 20}, 2, 1, 2, 0, 100.0);
  TrainConfig c = small_config(Method::ERM, 3);
  c.optimizer.lr0 = 1e300;
  c.optimizer.schedule = Schedule::Constant;
  CHECK_THROWS_AS(train(tr, tr, init_mlp({2, 4, 2}, 0), c), TrainingDiverged);
}

TEST_CASE("TrainConfig validation and labels") {
  TrainConfig c;
  c.validate();
  CHECK(c.label() == "ERM");
  c.method = Method::GDRO;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gdro = GdroConfig{};
  c.early_stop = true;
  c.validate();
  CHECK(c.label() == "GDRO-ES");
  c.name = "custom";
  CHECK(c.label() == "custom");
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(method_from_string("RWG") == Method::RWG);
  CHECK_THROWS_AS(method_from_string("JTT"), ConfigError);
}
