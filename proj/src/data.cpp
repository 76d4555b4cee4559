#include "sfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfl/rng.hpp"

namespace sfl {

std::string to_string(GroupMode mode) {
  return mode == GroupMode::LabelCrossSpurious ? "label_cross_spurious" : "spurious_only";
}

GroupMode group_mode_from_string(const std::string& name) {
  if (name == "label_cross_spurious") return GroupMode::LabelCrossSpurious;
  if (name == "spurious_only") return GroupMode::SpuriousOnly;
  throw ConfigError("unknown group mode '" + name + "'");
}

int group_index(int y, int s, GroupMode mode, int num_classes, int num_spurious) {
  if (y < 0 || y >= num_classes) {
    throw DomainError("class label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
  }
  if (s < 0 || s >= num_spurious) {
    throw DomainError("spurious attribute " + std::to_string(s) + " outside [0, " +
                      std::to_string(num_spurious) + ")");
  }
  return mode == GroupMode::LabelCrossSpurious ? y * num_spurious + s : s;
}

std::pair<int, int> group_cell(int group, GroupMode mode, int num_spurious) {
  if (mode == GroupMode::LabelCrossSpurious) return {group / num_spurious, group % num_spurious};
  return {-1, group};
}

GroupedDataset GroupedDataset::make(Matrix X, Labels y, Labels s, GroupMode mode, int num_classes,
                                    int num_spurious) {
  if (num_classes < 1 || num_spurious < 1) {
    throw ConfigError("need at least one class and one spurious value");
  }
  const auto n = static_cast<Eigen::Index>(y.size());
  if (X.rows() != n || static_cast<Eigen::Index>(s.size()) != n) {
    throw std::invalid_argument("X, y and s must have the same number of rows");
  }
  if (!X.allFinite()) throw std::invalid_argument("feature matrix has non-finite entries");

  GroupedDataset ds;
  ds.group_mode = mode;
  ds.num_classes = num_classes;
  ds.num_spurious = num_spurious;
  ds.n_per_group.assign(num_groups(mode, num_classes, num_spurious), 0);
  ds.g.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    ds.g[i] = group_index(y[i], s[i], mode, num_classes, num_spurious);
    ++ds.n_per_group[ds.g[i]];
  }
  ds.X = std::move(X);
  ds.y = std::move(y);
  ds.s = std::move(s);
  return ds;
}

GroupedDataset GroupedDataset::subset(const Index& rows) const {
  GroupedDataset out;
  out.group_mode = group_mode;
  out.num_classes = num_classes;
  out.num_spurious = num_spurious;
  out.n_per_group.assign(groups(), 0);
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.reserve(rows.size());
  out.s.reserve(rows.size());
  out.g.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || r >= size()) throw std::out_of_range("subset row out of range");
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
    out.y.push_back(y[r]);
    out.s.push_back(s[r]);
    out.g.push_back(g[r]);
    ++out.n_per_group[g[r]];
  }
  return out;
}

std::vector<Index> GroupedDataset::group_rows() const {
  std::vector<Index> rows(groups());
  for (int i = 0; i < size(); ++i) rows[g[i]].push_back(i);
  return rows;
}

void GroupedDataset::validate() const {
  const auto n = y.size();
  if (s.size() != n || g.size() != n || static_cast<std::size_t>(X.rows()) != n) {
    throw std::logic_error("dataset columns have mismatched lengths");
  }
  if (!X.allFinite()) throw std::logic_error("dataset has non-finite features");
  std::vector<int> counts(groups(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (g[i] != group_index(y[i], s[i], group_mode, num_classes, num_spurious)) {
      throw std::logic_error("group id inconsistent with (y, s) at row " + std::to_string(i));
    }
    ++counts[g[i]];
  }
  if (counts != n_per_group) throw std::logic_error("n_per_group does not match group counts");
}

void SyntheticConfig::validate() const {
  if (n_total < 1) throw ConfigError("n_total must be positive");
  if (num_classes < 1 || num_spurious < 1) throw ConfigError("need >= 1 class and spurious value");
  const int groups = num_groups(group_mode, num_classes, num_spurious);
  if (static_cast<int>(group_proportions.size()) != groups) {
    throw ConfigError("group_proportions has " + std::to_string(group_proportions.size()) +
                      " entries, expected " + std::to_string(groups));
  }
  double total = 0.0;
  for (double p : group_proportions) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("group proportions must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("group proportions must sum to 1");
  if (d_core < 0 || d_spur < 0 || d_noise < 0) throw ConfigError("dimensions must be >= 0");
  if (dim() < 1) throw ConfigError("total dimension must be >= 1");
  if (!(sigma_core >= 0.0 && sigma_spur >= 0.0 && sigma_noise >= 0.0)) {
    throw ConfigError("noise standard deviations must be >= 0");
  }
  if (margin_core != 0.0 && d_core < num_classes) {
    throw ConfigError("d_core must be >= num_classes for axis-aligned core templates");
  }
  if (margin_spur != 0.0 && d_spur < num_spurious) {
    throw ConfigError("d_spur must be >= num_spurious for axis-aligned spurious templates");
  }
}

std::vector<int> largest_remainder_counts(int total, const std::vector<double>& proportions) {
  const std::size_t k = proportions.size();
  std::vector<int> counts(k, 0);
  std::vector<double> remainder(k, 0.0);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = total * proportions[i];
    counts[i] = static_cast<int>(std::floor(exact));
    remainder[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t j = 0; assigned < total && j < k; ++j, ++assigned) ++counts[order[j]];
  return counts;
}

GroupedDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::vector<int> counts = largest_remainder_counts(cfg.n_total, cfg.group_proportions);
  for (std::size_t gi = 0; gi < counts.size(); ++gi) {
    if (counts[gi] == 0 && cfg.group_proportions[gi] > 0.0) {
      throw ConfigError("group " + std::to_string(gi) + " rounds to 0 examples with n_total=" +
                        std::to_string(cfg.n_total));
    }
  }

  Rng rng = make_rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> any_class(0, cfg.num_classes - 1);

  Matrix X = Matrix::Zero(cfg.n_total, cfg.dim());
  Labels y, s;
  y.reserve(cfg.n_total);
  s.reserve(cfg.n_total);
  Eigen::Index row = 0;
  for (std::size_t gi = 0; gi < counts.size(); ++gi) {
    auto [gy, gs] = group_cell(static_cast<int>(gi), cfg.group_mode, cfg.num_spurious);
    for (int k = 0; k < counts[gi]; ++k, ++row) {
      const int label = gy >= 0 ? gy : any_class(rng);
      int col = 0;
      for (int j = 0; j < cfg.d_core; ++j, ++col) {
        X(row, col) = (j == label ? cfg.margin_core : 0.0) + cfg.sigma_core * normal(rng);
      }
      for (int j = 0; j < cfg.d_spur; ++j, ++col) {
        X(row, col) = (j == gs ? cfg.margin_spur : 0.0) + cfg.sigma_spur * normal(rng);
      }
      for (int j = 0; j < cfg.d_noise; ++j, ++col) X(row, col) = cfg.sigma_noise * normal(rng);
      y.push_back(label);
      s.push_back(gs);
    }
  }
  return GroupedDataset::make(std::move(X), std::move(y), std::move(s), cfg.group_mode,
                              cfg.num_classes, cfg.num_spurious);
}

DatasetSplit split(const GroupedDataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
  const std::vector<double> f{fractions.train, fractions.val, fractions.test};
  for (double v : f) {
    if (!(v >= 0.0)) throw ConfigError("split fractions must be nonnegative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const int needed = static_cast<int>(std::count_if(f.begin(), f.end(), [](double v) { return v > 0; }));

  std::array<Index, 3> parts;
  const auto rows = ds.group_rows();
  for (std::size_t gi = 0; gi < rows.size(); ++gi) {
    Index members = rows[gi];
    if (members.empty()) continue;
    if (static_cast<int>(members.size()) < needed) {
      throw ConfigError("group " + std::to_string(gi) + " has " + std::to_string(members.size()) +
                        " examples, fewer than the " + std::to_string(needed) + " partitions");
    }
    Rng rng = make_rng(derive_seed({seed, gi}));
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = largest_remainder_counts(static_cast<int>(members.size()), f);
    auto it = members.begin();
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p].insert(parts[p].end(), it, it + counts[p]);
      it += counts[p];
    }
  }
  return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

Index balanced_subsample_rows(const Labels& groups, int num_groups, std::uint64_t seed) {
  std::vector<Index> rows(num_groups);
  for (std::size_t i = 0; i < groups.size(); ++i) rows.at(groups[i]).push_back(static_cast<int>(i));
  std::size_t m = groups.size();
  for (int gi = 0; gi < num_groups; ++gi) {
    if (rows[gi].empty()) {
      throw ConfigError("group " + std::to_string(gi) + " is empty; cannot balance");
    }
    m = std::min(m, rows[gi].size());
  }
  Index out;
  out.reserve(m * num_groups);
  for (int gi = 0; gi < num_groups; ++gi) {
    Rng rng = make_rng(derive_seed({seed, static_cast<std::uint64_t>(gi)}));
    std::shuffle(rows[gi].begin(), rows[gi].end(), rng);
    out.insert(out.end(), rows[gi].begin(), rows[gi].begin() + static_cast<std::ptrdiff_t>(m));
  }
  return out;
}

GroupedDataset balanced_subsample(const GroupedDataset& ds, std::uint64_t seed) {
  return ds.subset(balanced_subsample_rows(ds.g, ds.groups(), seed));
}

}  // namespace sfl
