#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;
using Index = std::vector<int>;

/// Raised for malformed configurations (bad proportions, impossible splits, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an argument falls outside the domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class GroupMode { LabelCrossSpurious, SpuriousOnly };

std::string to_string(GroupMode mode);
GroupMode group_mode_from_string(const std::string& name);

/// Maps (class label, spurious attribute) to a group id.
/// LabelCrossSpurious: y * num_spurious + s. SpuriousOnly: s.
int group_index(int y, int s, GroupMode mode, int num_classes, int num_spurious);

inline int num_groups(GroupMode mode, int num_classes, int num_spurious) {
  return mode == GroupMode::LabelCrossSpurious ? num_classes * num_spurious : num_spurious;
}

/// Feature matrix with per-example class label, spurious attribute and group id.
/// Immutable by convention once built; use `make` to get validated construction.
struct GroupedDataset {
  Matrix X;  // n x d
  Labels y;
  Labels s;
  Labels g;
  GroupMode group_mode = GroupMode::LabelCrossSpurious;
  int num_classes = 0;
  int num_spurious = 0;
  std::vector<int> n_per_group;

  /// Builds a dataset, deriving g and n_per_group from (y, s). Throws on any
  /// invariant violation (length mismatch, non-finite X, out-of-range labels).
  static GroupedDataset make(Matrix X, Labels y, Labels s, GroupMode mode, int num_classes,
                             int num_spurious);

  int size() const { return static_cast<int>(y.size()); }
  int dim() const { return static_cast<int>(X.cols()); }
  int groups() const { return num_groups(group_mode, num_classes, num_spurious); }
  bool empty() const { return y.empty(); }

  /// Rows selected by `rows`, in that order.
  GroupedDataset subset(const Index& rows) const;

  /// Row indices of each group, in ascending order.
  std::vector<Index> group_rows() const;

  /// Throws std::logic_error when any invariant does not hold.
  void validate() const;
};

/// Parameters of the Gaussian-block synthetic generator.
///
/// Each example in group (y, s) has three feature blocks:
///   core  = margin_core * e_y + N(0, sigma_core^2 I)      (d_core dims, e_y = y-th axis)
///   spur  = margin_spur * e_s + N(0, sigma_spur^2 I)      (d_spur dims, e_s = s-th axis)
///   noise = N(0, sigma_noise^2 I)                          (d_noise dims)
/// Templates are axis aligned, so d_core >= num_classes and d_spur >= num_spurious
/// whenever the corresponding margin is nonzero.
struct SyntheticConfig {
  int n_total = 4795;
  int num_classes = 2;
  int num_spurious = 2;
  GroupMode group_mode = GroupMode::LabelCrossSpurious;
  std::vector<double> group_proportions{0.73, 0.04, 0.01, 0.22};
  int d_core = 2;
  int d_spur = 2;
  int d_noise = 0;
  double margin_core = 1.0;
  double margin_spur = 1.0;
  double sigma_core = 1.0;
  double sigma_spur = 1.0;
  double sigma_noise = 1.0;
  std::uint64_t seed = 0;

  int dim() const { return d_core + d_spur + d_noise; }
  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

/// Largest-remainder apportionment of `total` items by `proportions`.
/// Ties in the fractional part go to the lower index.
std::vector<int> largest_remainder_counts(int total, const std::vector<double>& proportions);

/// (y, s) of a group id. In SpuriousOnly mode the class label is not determined
/// by the group and the generator assigns it separately.
std::pair<int, int> group_cell(int group, GroupMode mode, int num_spurious);

GroupedDataset generate_synthetic(const SyntheticConfig& cfg);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  bool operator==(const SplitFractions&) const = default;
};

struct DatasetSplit {
  GroupedDataset train;
  GroupedDataset val;
  GroupedDataset test;
};

/// Group-stratified split. Each group's rows are permuted with `seed` and cut
/// by largest-remainder counts of the fractions.
DatasetSplit split(const GroupedDataset& ds, const SplitFractions& fractions, std::uint64_t seed);

/// Downsamples every group without replacement to the smallest group size.
GroupedDataset balanced_subsample(const GroupedDataset& ds, std::uint64_t seed);

/// Row indices of a balanced subsample (same draw as balanced_subsample).
Index balanced_subsample_rows(const Labels& groups, int num_groups, std::uint64_t seed);

}  // namespace sfl
