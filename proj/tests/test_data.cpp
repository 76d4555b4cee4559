#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "sfl/data.hpp"
#include "sfl/rng.hpp"

using namespace sfl;

namespace {

GroupedDataset dataset_with_counts(const std::vector<int>& counts, int d = 3, std::uint64_t seed = 1) {
  // Groups in LabelCrossSpurious order with K = |S| = 2 (or K = 1 when a single group is given).
  const int S = counts.size() == 1 ? 1 : 2;
  const int K = static_cast<int>(counts.size()) / S;
  const int n = std::accumulate(counts.begin(), counts.end(), 0);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix X(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = normal(rng);
  }
  Labels y, s;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    for (int k = 0; k < counts[g]; ++k) {
      y.push_back(static_cast<int>(g) / S);
      s.push_back(static_cast<int>(g) % S);
    }
  }
  return GroupedDataset::make(X, y, s, GroupMode::LabelCrossSpurious, K, S);
}

// Largest remainder with integer arithmetic: proportions are num[i] / den.
std::vector<int> lr_oracle(int total, const std::vector<long long>& num, long long den) {
  const std::size_t k = num.size();
  std::vector<int> counts(k);
  std::vector<long long> rem(k);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    counts[i] = static_cast<int>(total * num[i] / den);
    rem[i] = total * num[i] % den;
    assigned += counts[i];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (rem[i] > rem[best]) best = i;
    }
    ++counts[best];
    rem[best] = -1;
    ++assigned;
  }
  return counts;
}

std::vector<double> row_key(const GroupedDataset& ds, int i) {
  std::vector<double> key;
  for (int j = 0; j < ds.dim(); ++j) key.push_back(ds.X(i, j));
  key.push_back(ds.y[i]);
  key.push_back(ds.s[i]);
  return key;
}

}  // namespace

TEST_CASE("group_index examples") {
  CHECK(group_index(1, 0, GroupMode::LabelCrossSpurious, 2, 2) == 2);
  CHECK(group_index(0, 0, GroupMode::LabelCrossSpurious, 2, 2) == 0);
  CHECK(group_index(0, 0, GroupMode::SpuriousOnly, 2, 2) == 0);
  CHECK(group_index(17, 3, GroupMode::SpuriousOnly, 62, 5) == 3);
}

TEST_CASE("group_index rejects out-of-range inputs") {
  CHECK_THROWS_AS(group_index(2, 0, GroupMode::LabelCrossSpurious, 2, 2), DomainError);
  CHECK_THROWS_AS(group_index(0, 2, GroupMode::LabelCrossSpurious, 2, 2), DomainError);
  CHECK_THROWS_AS(group_index(-1, 0, GroupMode::SpuriousOnly, 2, 2), DomainError);
}

TEST_CASE("group_index is a bijection in LabelCrossSpurious mode") {
  for (int K = 1; K <= 4; ++K) {
    for (int S = 1; S <= 4; ++S) {
      std::set<int> seen;
      for (int y = 0; y < K; ++y) {
        for (int s = 0; s < S; ++s) {
          const int g = group_index(y, s, GroupMode::LabelCrossSpurious, K, S);
          CHECK(g >= 0);
          CHECK(g < K * S);
          seen.insert(g);
          CHECK(group_cell(g, GroupMode::LabelCrossSpurious, S) == std::make_pair(y, s));
        }
      }
      CHECK(static_cast<int>(seen.size()) == K * S);
    }
  }
}

TEST_CASE("GroupedDataset::make derives groups and counts") {
  Matrix X = Matrix::Zero(4, 2);
  const GroupedDataset a = GroupedDataset::make(X, {0, 1, 1, 0}, {1, 0, 1, 1}, GroupMode::LabelCrossSpurious, 2, 2);
  CHECK(a.g == Labels{1, 2, 3, 1});
  CHECK(a.n_per_group == std::vector<int>{0, 2, 1, 1});
  a.validate();

  const GroupedDataset b = GroupedDataset::make(X, {0, 1, 1, 0}, {1, 0, 1, 1}, GroupMode::SpuriousOnly, 2, 2);
  CHECK(b.g == Labels{1, 0, 1, 1});
  CHECK(b.groups() == 2);

  CHECK_THROWS(GroupedDataset::make(X, {0, 1, 1}, {1, 0, 1, 1}, GroupMode::LabelCrossSpurious, 2, 2));
  Matrix bad = X;
  bad(0, 0) = std::nan("");
  CHECK_THROWS(GroupedDataset::make(bad, {0, 1, 1, 0}, {1, 0, 1, 1}, GroupMode::LabelCrossSpurious, 2, 2));
  CHECK_THROWS_AS(GroupedDataset::make(X, {0, 2, 1, 0}, {1, 0, 1, 1}, GroupMode::LabelCrossSpurious, 2, 2),
                  DomainError);
}

TEST_CASE("largest remainder counts") {
  // Waterbirds training counts from exact proportions.
  const std::vector<double> exact{3498.0 / 4795, 184.0 / 4795, 56.0 / 4795, 1057.0 / 4795};
  CHECK(largest_remainder_counts(4795, exact) == std::vector<int>{3498, 184, 56, 1057});
  // Rounded percentages apportion differently; checked against the integer oracle.
  CHECK(largest_remainder_counts(4795, {0.73, 0.04, 0.01, 0.22}) == lr_oracle(4795, {73, 4, 1, 22}, 100));
  CHECK(largest_remainder_counts(400, {0.25, 0.25, 0.25, 0.25}) == std::vector<int>{100, 100, 100, 100});
  // Ties in the remainder go to the lower index.
  CHECK(largest_remainder_counts(1, {0.5, 0.5}) == std::vector<int>{1, 0});
  CHECK(largest_remainder_counts(2, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::vector<int>{1, 1, 0});
}

TEST_CASE("largest remainder matches the integer oracle on random proportions") {
  Rng rng(5);
  std::uniform_int_distribution<int> part(0, 50), tot(1, 5000);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<long long> num(1 + trial % 5);
    long long den = 0;
    for (auto& v : num) den += (v = part(rng));
    if (den == 0) continue;
    std::vector<double> p;
    for (auto v : num) p.push_back(static_cast<double>(v) / static_cast<double>(den));
    const int total = tot(rng);
    const auto got = largest_remainder_counts(total, p);
    CHECK(std::accumulate(got.begin(), got.end(), 0) == total);
    // Floating remainders can differ from exact ones only in exact-tie cases.
    const auto want = lr_oracle(total, num, den);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1);
  }
}

TEST_CASE("generate_synthetic counts and determinism") {
  SyntheticConfig cfg;
  cfg.n_total = 4795;
  cfg.group_proportions = {3498.0 / 4795, 184.0 / 4795, 56.0 / 4795, 1057.0 / 4795};
  const GroupedDataset ds = generate_synthetic(cfg);
  CHECK(ds.size() == 4795);
  CHECK(ds.n_per_group == std::vector<int>{3498, 184, 56, 1057});
  ds.validate();

  const GroupedDataset again = generate_synthetic(cfg);
  CHECK(ds.X == again.X);
  CHECK(ds.y == again.y);

  cfg.group_proportions = {0.25, 0.25, 0.25, 0.25};
  cfg.n_total = 400;
  CHECK(generate_synthetic(cfg).n_per_group == std::vector<int>{100, 100, 100, 100});

  SyntheticConfig other = cfg;
  other.seed = 99;
  CHECK(generate_synthetic(other).X != generate_synthetic(cfg).X);
}

TEST_CASE("generate_synthetic rejects bad configs") {
  SyntheticConfig cfg;
  cfg.group_proportions = {0.5, 0.5, 0.1, 0.0};
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg.group_proportions = {0.999, 0.001, 0.0, 0.0};
  cfg.n_total = 100;  // 0.1 examples rounds to 0
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg = SyntheticConfig{};
  cfg.sigma_core = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SyntheticConfig{};
  cfg.d_core = 0;
  cfg.d_spur = 0;
  cfg.d_noise = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("spurious-only Bayes classifier accuracy equals the y-s agreement rate") {
  SyntheticConfig cfg;
  cfg.n_total = 100000;
  cfg.sigma_spur = 0.0;
  cfg.margin_core = 1.0;
  cfg.sigma_core = 10.0;
  cfg.seed = 17;
  const GroupedDataset ds = generate_synthetic(cfg);
  // Bayes rule on the spurious block alone: s decodes exactly, and P(y = s | s) > 1/2 for both s.
  int correct = 0, agree = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const int s_hat = ds.X(i, cfg.d_core + 1) > ds.X(i, cfg.d_core) ? 1 : 0;
    CHECK(s_hat == ds.s[i]);
    correct += s_hat == ds.y[i];
    agree += ds.s[i] == ds.y[i];
  }
  CHECK(correct == agree);
  // Closed form: p(0, 0) + p(1, 1).
  CHECK(static_cast<double>(agree) / ds.size() == doctest::Approx(0.73 + 0.22).epsilon(1e-9));
}

TEST_CASE("core block means converge to the templates") {
  SyntheticConfig cfg;
  cfg.n_total = 20000;
  cfg.group_proportions = {0.25, 0.25, 0.25, 0.25};
  cfg.margin_core = 1.5;
  cfg.sigma_core = 0.7;
  cfg.d_noise = 3;
  const GroupedDataset ds = generate_synthetic(cfg);
  for (int y = 0; y < 2; ++y) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    int n = 0;
    for (int i = 0; i < ds.size(); ++i) {
      if (ds.y[i] != y) continue;
      mean += ds.X.row(i).head<2>().transpose();
      ++n;
    }
    mean /= n;
    const double tol = 5.0 * cfg.sigma_core / std::sqrt(static_cast<double>(n));
    for (int j = 0; j < 2; ++j) CHECK(std::abs(mean(j) - (j == y ? cfg.margin_core : 0.0)) < tol);
  }
}

TEST_CASE("SpuriousOnly generation draws labels independently of the group") {
  SyntheticConfig cfg;
  cfg.group_mode = GroupMode::SpuriousOnly;
  cfg.num_classes = 3;
  cfg.num_spurious = 2;
  cfg.d_core = 3;
  cfg.group_proportions = {0.7, 0.3};
  cfg.n_total = 3000;
  const GroupedDataset ds = generate_synthetic(cfg);
  CHECK(ds.g == ds.s);
  std::vector<int> per_class(3, 0);
  for (int v : ds.y) ++per_class[v];
  for (int c : per_class) CHECK(c > 800);
}

TEST_CASE("split examples") {
  const GroupedDataset ten = dataset_with_counts({10});
  const DatasetSplit a = split(ten, {0.8, 0.1, 0.1}, 3);
  CHECK(a.train.size() == 8);
  CHECK(a.val.size() == 1);
  CHECK(a.test.size() == 1);

  const DatasetSplit b = split(ten, {1.0, 0.0, 0.0}, 3);
  CHECK(b.train.size() == 10);
  CHECK(b.val.empty());
  CHECK(b.test.empty());
  std::vector<std::vector<double>> in, out;
  for (int i = 0; i < 10; ++i) {
    in.push_back(row_key(ten, i));
    out.push_back(row_key(b.train, i));
  }
  CHECK(in != out);  // permuted
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  CHECK(in == out);

  CHECK_THROWS_AS(split(dataset_with_counts({2, 5, 5, 5}), {0.8, 0.1, 0.1}, 0), ConfigError);
  CHECK_THROWS_AS(split(ten, {0.8, 0.1, 0.2}, 0), ConfigError);
}

TEST_CASE("split of a Waterbirds-sized set matches per-group largest remainder and partitions the input") {
  const GroupedDataset ds = dataset_with_counts({3498, 184, 56, 1057});
  const DatasetSplit parts = split(ds, {0.8, 0.1, 0.1}, 42);
  for (int g = 0; g < 4; ++g) {
    const auto want = lr_oracle(ds.n_per_group[g], {8, 1, 1}, 10);
    CHECK(parts.train.n_per_group[g] == want[0]);
    CHECK(parts.val.n_per_group[g] == want[1]);
    CHECK(parts.test.n_per_group[g] == want[2]);
  }
  std::multiset<std::vector<double>> in, out;
  for (int i = 0; i < ds.size(); ++i) in.insert(row_key(ds, i));
  for (const GroupedDataset* p : {&parts.train, &parts.val, &parts.test}) {
    p->validate();
    for (int i = 0; i < p->size(); ++i) out.insert(row_key(*p, i));
  }
  CHECK(in == out);

  const DatasetSplit again = split(ds, {0.8, 0.1, 0.1}, 42);
  CHECK(again.val.X == parts.val.X);
}

TEST_CASE("balanced_subsample examples") {
  const GroupedDataset val = dataset_with_counts({467, 466, 133, 133});
  const GroupedDataset bal = balanced_subsample(val, 7);
  CHECK(bal.n_per_group == std::vector<int>{133, 133, 133, 133});
  CHECK(balanced_subsample(val, 7).X == bal.X);

  CHECK(balanced_subsample(dataset_with_counts({50, 50, 50, 50}), 1).n_per_group ==
        std::vector<int>{50, 50, 50, 50});
  // {10, 1} as a two-group dataset (K = 1, |S| = 2).
  Matrix X = Matrix::Random(11, 2);
  Labels y(11, 0), s(11, 0);
  s[10] = 1;
  const GroupedDataset two = GroupedDataset::make(X, y, s, GroupMode::LabelCrossSpurious, 1, 2);
  CHECK(balanced_subsample(two, 0).n_per_group == std::vector<int>{1, 1});

  // No row is drawn twice.
  const Index rows = balanced_subsample_rows(val.g, 4, 3);
  CHECK(std::set<int>(rows.begin(), rows.end()).size() == rows.size());
}

TEST_CASE("balanced_subsample names an empty group") {
  const GroupedDataset ds = dataset_with_counts({5, 0, 3, 4});
  try {
    balanced_subsample(ds, 0);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("group 1") != std::string::npos);
  }
}
