#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/model.hpp"

namespace sfl {

// ---------------------------------------------------------------------------
// Feature standardization
// ---------------------------------------------------------------------------

struct StandardizeStats {
  Vector mean;
  Vector std;  // population standard deviation, before the 1e-12 floor
};

struct Standardized {
  Matrix F;
  StandardizeStats stats;
};

/// Column-wise (x - mean) / max(std, 1e-12). Statistics are computed from F
/// unless `stats` is given, in which case they are reused.
Standardized standardize_features(const Matrix& F,
                                  const std::optional<StandardizeStats>& stats = std::nullopt);

// ---------------------------------------------------------------------------
// L1-regularized multinomial logistic regression
// ---------------------------------------------------------------------------

struct SolverConfig {
  int max_iters = 20000;
  double tol = 1e-13;      // relative objective change
  double kkt_tol = 1e-8;   // infinity norm of the proximal gradient mapping

  bool operator==(const SolverConfig&) const = default;
};

struct L1LogRegResult {
  Matrix W;  // K x f
  Vector b;  // K
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// (1/n) sum_i CE(softmax(W F_i + b), t_i) + lambda ||W||_1, intercept unpenalized.
double l1_logreg_objective(const Matrix& F, const Labels& t, double lambda, const Matrix& W,
                           const Vector& b);

/// Minimizes l1_logreg_objective by accelerated proximal gradient (soft
/// thresholding on W) with backtracking and function-value restarts. Returns the
/// best iterate seen; `converged` is false if max_iters ran out first.
L1LogRegResult fit_l1_logreg(const Matrix& F, const Labels& t, int num_targets, double lambda,
                             const SolverConfig& solver = {});

/// Grid value c (inverse regularization) maps to lambda = 1 / (c n).
inline double lambda_from_c(double c, int n) { return 1.0 / (c * static_cast<double>(n)); }

// ---------------------------------------------------------------------------
// Deep feature reweighting
// ---------------------------------------------------------------------------

enum class DfrTarget { ClassLabel, SpuriousAttribute };

std::string to_string(DfrTarget target);
DfrTarget dfr_target_from_string(const std::string& name);

struct DfrConfig {
  std::vector<double> c_grid{1.0, 0.7, 0.3, 0.1, 0.07, 0.03, 0.01};
  int repeats = 10;
  DfrTarget target = DfrTarget::ClassLabel;
  bool standardize = true;
  bool balanced = true;  // false: fit on the whole reweighting set (CXR-style)
  std::uint64_t seed = 0;
  SolverConfig solver;

  void validate() const;
  bool operator==(const DfrConfig&) const = default;
};

/// Embeddings of the reweighting set with the fitting target and the group used
/// for balancing and for worst-group scoring.
struct ReweightingSet {
  Matrix F;
  Labels target;
  Labels groups;
  int num_targets = 0;
  int num_groups = 0;

  int size() const { return static_cast<int>(target.size()); }
  ReweightingSet subset(const Index& rows) const;
};

/// Builds the reweighting set for `cfg.target` from embeddings of `ds`.
ReweightingSet make_reweighting_set(const Matrix& features, const GroupedDataset& ds,
                                    DfrTarget target);

struct TuneRow {
  double c = 0.0;
  double val_wga = 0.0;
  double sparsity = 0.0;  // fraction of zero weights
};

struct TuneResult {
  double chosen_c = 0.0;
  std::vector<TuneRow> table;
};

/// Fits on (a balanced subsample of) `half1` for every c in the grid and scores
/// worst-group accuracy on `half2`. Ties go to the smallest c (strongest penalty).
TuneResult dfr_tune(const ReweightingSet& half1, const ReweightingSet& half2, const DfrConfig& cfg);

struct DfrResult {
  Layer head;  // acts on raw (unstandardized) features
  double chosen_c = 0.0;
  std::vector<TuneRow> per_c_val_wga;
  int repeats_used = 0;
};

/// Standardize, tune c on a group-stratified 50/50 split, then average the
/// heads of `repeats` fits on fresh balanced subsamples of the full set.
DfrResult dfr_fit(const ReweightingSet& data, const DfrConfig& cfg);

}  // namespace sfl
