#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sfl/data.hpp"

namespace sfl {

using GroupAccuracy = std::map<int, double>;
using GroupWeights = std::map<int, double>;

/// accuracy_g = correct_g / n_g for each group present in `g`.
GroupAccuracy per_group_accuracy(std::span<const int> preds, std::span<const int> y,
                                 std::span<const int> g);

/// Minimum of the per-group accuracies.
double worst_group_accuracy(const GroupAccuracy& per_group);

/// sum_g w_g acc_g. Groups with positive training weight that are absent from
/// `per_group` are dropped and the remaining weights renormalized; when that
/// happens `renormalized` (if given) is set to true.
double mean_accuracy_train_weighted(const GroupAccuracy& per_group, const GroupWeights& train_dist,
                                    bool* renormalized = nullptr);

/// Empirical group distribution n_g / n.
GroupWeights group_distribution(const std::vector<int>& n_per_group);

/// Mann-Whitney AUC: mean over (positive, negative) pairs of 1[s+ > s-] + 0.5 1[s+ == s-].
/// Computed in O(n log n) via tie-averaged ranks.
double auc(std::span<const double> scores, std::span<const int> labels);

struct WorstGroupAuc {
  double worst = 0.0;    // min over the two positive subgroups
  double overall = 0.0;  // negatives vs all positives
  double auc_s0 = 0.0;
  double auc_s1 = 0.0;
};

/// Negatives (y = 0) against positives with s = 0 and against positives with s = 1.
WorstGroupAuc worst_group_auc(std::span<const double> scores, std::span<const int> y,
                              std::span<const int> s);

struct EvalReport {
  GroupAccuracy per_group_acc;
  double wga = 0.0;
  double mean_acc = 0.0;
  std::optional<double> auc;
  std::optional<double> worst_group_auc;
  std::vector<int> n_per_group;
};

/// Evaluates logits against a dataset. AUC fields are filled for binary
/// problems with two spurious values when every AUC subgroup is nonempty.
EvalReport evaluate_logits(const Matrix& logits, const GroupedDataset& ds,
                           const GroupWeights& train_dist);

/// Same, but scores predictions of the spurious attribute (s-DFR).
EvalReport evaluate_spurious_logits(const Matrix& logits, const GroupedDataset& ds,
                                    const GroupWeights& train_dist);

}  // namespace sfl
