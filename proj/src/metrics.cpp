#include "sfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sfl/model.hpp"

namespace sfl {

GroupAccuracy per_group_accuracy(std::span<const int> preds, std::span<const int> y,
                                 std::span<const int> g) {
  if (preds.empty()) throw std::invalid_argument("per_group_accuracy on empty input");
  if (preds.size() != y.size() || preds.size() != g.size()) {
    throw std::invalid_argument("preds, y and g must have equal lengths");
  }
  std::map<int, std::pair<long, long>> tally;  // group -> (correct, total)
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& [correct, total] = tally[g[i]];
    correct += preds[i] == y[i] ? 1 : 0;
    ++total;
  }
  GroupAccuracy out;
  for (const auto& [group, ct] : tally) {
    out[group] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return out;
}

double worst_group_accuracy(const GroupAccuracy& per_group) {
  if (per_group.empty()) throw std::invalid_argument("worst_group_accuracy of an empty map");
  double worst = per_group.begin()->second;
  for (const auto& [group, acc] : per_group) worst = std::min(worst, acc);
  return worst;
}

double mean_accuracy_train_weighted(const GroupAccuracy& per_group, const GroupWeights& train_dist,
                                    bool* renormalized) {
  if (per_group.empty()) throw std::invalid_argument("mean accuracy of an empty map");
  double mass = 0.0;
  double total = 0.0;
  bool dropped = false;
  for (const auto& [group, w] : train_dist) {
    if (!(w >= 0.0)) throw DomainError("train distribution weights must be >= 0");
    auto it = per_group.find(group);
    if (it == per_group.end()) {
      dropped = dropped || w > 0.0;
      continue;
    }
    mass += w;
    total += w * it->second;
  }
  if (renormalized) *renormalized = dropped;
  if (!(mass > 0.0)) throw DomainError("no training weight on the evaluated groups");
  return dropped ? total / mass : total;
}

GroupWeights group_distribution(const std::vector<int>& n_per_group) {
  const double n = std::accumulate(n_per_group.begin(), n_per_group.end(), 0.0);
  if (!(n > 0.0)) throw std::invalid_argument("group distribution of an empty dataset");
  GroupWeights out;
  for (std::size_t gi = 0; gi < n_per_group.size(); ++gi) {
    out[static_cast<int>(gi)] = n_per_group[gi] / n;
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives, so tie-averaged ranks stay integral.
  double twice_rank_sum = 0.0;
  double n_pos = 0.0;
  double n_neg = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_avg_rank = static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      const int l = labels[order[k]];
      if (l == 1) {
        twice_rank_sum += twice_avg_rank;
        n_pos += 1.0;
      } else if (l == 0) {
        n_neg += 1.0;
      } else {
        throw DomainError("auc labels must be 0 or 1");
      }
    }
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw DomainError("auc needs both positive and negative examples");
  const double twice_u = twice_rank_sum - n_pos * (n_pos + 1.0);
  return twice_u / (2.0 * n_pos * n_neg);
}

WorstGroupAuc worst_group_auc(std::span<const double> scores, std::span<const int> y,
                              std::span<const int> s) {
  if (scores.size() != y.size() || scores.size() != s.size()) {
    throw std::invalid_argument("scores, y and s must have equal lengths");
  }
  std::vector<double> sc[2];
  std::vector<int> lab[2];
  std::vector<double> all_scores(scores.begin(), scores.end());
  std::vector<int> all_labels(y.begin(), y.end());
  std::size_t pos_count[2] = {0, 0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (y[i] == 0) {
      for (int k = 0; k < 2; ++k) {
        sc[k].push_back(scores[i]);
        lab[k].push_back(0);
      }
    } else if (y[i] == 1) {
      if (s[i] != 0 && s[i] != 1) throw DomainError("spurious attribute on positives must be 0 or 1");
      sc[s[i]].push_back(scores[i]);
      lab[s[i]].push_back(1);
      ++pos_count[s[i]];
    } else {
      throw DomainError("worst_group_auc needs binary labels");
    }
  }
  for (int k = 0; k < 2; ++k) {
    if (pos_count[k] == 0) {
      throw DomainError("positive subgroup s=" + std::to_string(k) + " is empty");
    }
  }
  WorstGroupAuc r;
  r.auc_s0 = auc(sc[0], lab[0]);
  r.auc_s1 = auc(sc[1], lab[1]);
  r.worst = std::min(r.auc_s0, r.auc_s1);
  r.overall = auc(all_scores, all_labels);
  return r;
}

namespace {

EvalReport evaluate_against(const Matrix& logits, const GroupedDataset& ds, const Labels& target,
                            const GroupWeights& train_dist, bool with_auc) {
  if (logits.rows() != ds.size()) throw std::invalid_argument("logit rows do not match dataset");
  const Labels preds = argmax_rows(logits);
  EvalReport r;
  r.per_group_acc = per_group_accuracy(preds, target, ds.g);
  r.wga = worst_group_accuracy(r.per_group_acc);
  r.mean_acc = mean_accuracy_train_weighted(r.per_group_acc, train_dist);
  r.n_per_group = ds.n_per_group;
  if (with_auc && logits.cols() == 2) {
    std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) scores[i] = logits(i, 1) - logits(i, 0);
    const bool has_pos = std::count(target.begin(), target.end(), 1) > 0;
    const bool has_neg = std::count(target.begin(), target.end(), 0) > 0;
    if (has_pos && has_neg) r.auc = auc(scores, target);
    if (ds.num_spurious == 2 && has_neg) {
      bool subgroups = true;
      for (int k = 0; k < 2; ++k) {
        bool found = false;
        for (int i = 0; i < ds.size() && !found; ++i) found = target[i] == 1 && ds.s[i] == k;
        subgroups = subgroups && found;
      }
      if (subgroups) r.worst_group_auc = worst_group_auc(scores, target, ds.s).worst;
    }
  }
  return r;
}

}  // namespace

EvalReport evaluate_logits(const Matrix& logits, const GroupedDataset& ds,
                           const GroupWeights& train_dist) {
  return evaluate_against(logits, ds, ds.y, train_dist, true);
}

EvalReport evaluate_spurious_logits(const Matrix& logits, const GroupedDataset& ds,
                                    const GroupWeights& train_dist) {
  return evaluate_against(logits, ds, ds.s, train_dist, false);
}

}  // namespace sfl
