#include "sfl/dfr.hpp"

#include <algorithm>
#include <cmath>

#include "sfl/metrics.hpp"
#include "sfl/rng.hpp"

namespace sfl {

Standardized standardize_features(const Matrix& F, const std::optional<StandardizeStats>& stats) {
  Standardized out;
  if (stats) {
    if (stats->mean.size() != F.cols() || stats->std.size() != F.cols()) {
      throw std::invalid_argument("standardization stats do not match feature width");
    }
    out.stats = *stats;
  } else {
    const Eigen::Index n = F.rows();
    out.stats.mean = Vector::Zero(F.cols());
    out.stats.std = Vector::Zero(F.cols());
    for (Eigen::Index j = 0; j < F.cols() && n > 0; ++j) {
      // Shift by the first entry so a constant column has an exact mean.
      const double shift = F(0, j);
      const auto centered = (F.col(j).array() - shift);
      const double m = centered.mean();
      out.stats.mean(j) = shift + m;
      out.stats.std(j) = std::sqrt((centered - m).square().mean());
    }
  }
  const Vector scale = out.stats.std.cwiseMax(1e-12);
  out.F = (F.rowwise() - out.stats.mean.transpose()).array().rowwise() / scale.transpose().array();
  return out;
}

namespace {

struct SmoothEval {
  double value = 0.0;
  Matrix gW;
  Vector gb;
};

// Mean cross-entropy and its gradient at (W, b).
SmoothEval smooth_part(const Matrix& F, const Labels& t, const Matrix& W, const Vector& b,
                       bool with_grad) {
  Matrix logits = F * W.transpose();
  logits.rowwise() += b.transpose();
  const Eigen::Index n = F.rows();
  const Eigen::Index K = W.rows();
  SmoothEval e;
  Matrix G(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    e.value += lse - logits(i, t[i]);
    if (with_grad) {
      for (Eigen::Index k = 0; k < K; ++k) G(i, k) = std::exp(logits(i, k) - lse);
      G(i, t[i]) -= 1.0;
    }
  }
  e.value /= static_cast<double>(n);
  if (with_grad) {
    G /= static_cast<double>(n);
    e.gW = G.transpose() * F;
    e.gb = G.colwise().sum().transpose();
  }
  return e;
}

Matrix soft_threshold(const Matrix& A, double tau) {
  return A.unaryExpr([tau](double a) { return a > tau ? a - tau : (a < -tau ? a + tau : 0.0); });
}

void check_targets(const Matrix& F, const Labels& t, int num_targets) {
  if (F.rows() != static_cast<Eigen::Index>(t.size())) throw std::invalid_argument("F/t length mismatch");
  if (t.empty()) throw std::invalid_argument("empty logistic regression problem");
  if (num_targets < 2) throw std::invalid_argument("need at least two target classes");
  std::vector<int> seen(num_targets, 0);
  for (int v : t) {
    if (v < 0 || v >= num_targets) throw DomainError("target " + std::to_string(v) + " out of range");
    seen[v] = 1;
  }
  for (int k = 0; k < num_targets; ++k) {
    if (!seen[k]) throw DomainError("class " + std::to_string(k) + " missing from targets");
  }
}

}  // namespace

double l1_logreg_objective(const Matrix& F, const Labels& t, double lambda, const Matrix& W,
                           const Vector& b) {
  return smooth_part(F, t, W, b, false).value + lambda * W.cwiseAbs().sum();
}

L1LogRegResult fit_l1_logreg(const Matrix& F, const Labels& t, int num_targets, double lambda,
                             const SolverConfig& solver) {
  check_targets(F, t, num_targets);
  if (!(lambda > 0.0)) throw DomainError("lambda must be > 0");
  const Eigen::Index K = num_targets;
  const Eigen::Index f = F.cols();

  Matrix W = Matrix::Zero(K, f);
  Vector b = Vector::Zero(K);
  double obj = l1_logreg_objective(F, t, lambda, W, b);
  Matrix Wy = W;
  Vector by = b;
  double momentum_t = 1.0;
  double L = 1.0;

  L1LogRegResult best{W, b, obj, 0, false};
  for (int it = 1; it <= solver.max_iters; ++it) {
    const SmoothEval at_y = smooth_part(F, t, Wy, by, true);
    Matrix Wz;
    Vector bz;
    double fz = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      Wz = soft_threshold(Wy - at_y.gW / L, lambda / L);
      bz = by - at_y.gb / L;
      fz = smooth_part(F, t, Wz, bz, false).value;
      const Matrix dW = Wz - Wy;
      const Vector db = bz - by;
      const double lin = (at_y.gW.array() * dW.array()).sum() + at_y.gb.dot(db);
      const double quad = 0.5 * L * (dW.squaredNorm() + db.squaredNorm());
      if (fz <= at_y.value + lin + quad + 1e-15 * std::abs(at_y.value)) break;
      L *= 2.0;
    }
    const double obj_z = fz + lambda * Wz.cwiseAbs().sum();
    const double mapping = L * std::max((Wy - Wz).cwiseAbs().maxCoeff(), (by - bz).cwiseAbs().maxCoeff());
    best.iterations = it;

    const bool extrapolated = momentum_t > 1.0;
    if (obj_z > obj && extrapolated) {
      // Function-value restart: drop momentum and retry from the last iterate.
      Wy = W;
      by = b;
      momentum_t = 1.0;
      continue;
    }
    const double prev_obj = obj;
    const Matrix W_prev = W;
    const Vector b_prev = b;
    W = std::move(Wz);
    b = std::move(bz);
    obj = obj_z;
    if (obj < best.objective) {
      best.W = W;
      best.b = b;
      best.objective = obj;
    }
    const double rel_change = std::abs(prev_obj - obj) / std::max(1.0, std::abs(obj));
    if (mapping < solver.kkt_tol || (!extrapolated && rel_change < solver.tol)) {
      best.converged = true;
      break;
    }
    const double next_t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
    const double beta = (momentum_t - 1.0) / next_t;
    Wy = W + beta * (W - W_prev);
    by = b + beta * (b - b_prev);
    momentum_t = next_t;
    L *= 0.9;
  }
  return best;
}

std::string to_string(DfrTarget target) {
  return target == DfrTarget::ClassLabel ? "class_label" : "spurious_attribute";
}

DfrTarget dfr_target_from_string(const std::string& name) {
  if (name == "class_label") return DfrTarget::ClassLabel;
  if (name == "spurious_attribute") return DfrTarget::SpuriousAttribute;
  throw ConfigError("unknown dfr target '" + name + "'");
}

void DfrConfig::validate() const {
  if (c_grid.empty()) throw ConfigError("dfr.c_grid must not be empty");
  for (double c : c_grid) {
    if (!(c > 0.0)) throw ConfigError("dfr.c_grid values must be > 0");
  }
  if (repeats < 1) throw ConfigError("dfr.repeats must be >= 1");
  if (solver.max_iters < 1) throw ConfigError("dfr.solver.max_iters must be >= 1");
}

ReweightingSet ReweightingSet::subset(const Index& rows) const {
  ReweightingSet out;
  out.num_targets = num_targets;
  out.num_groups = num_groups;
  out.F.resize(static_cast<Eigen::Index>(rows.size()), F.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.F.row(static_cast<Eigen::Index>(i)) = F.row(rows[i]);
    out.target.push_back(target[rows[i]]);
    out.groups.push_back(groups[rows[i]]);
  }
  return out;
}

ReweightingSet make_reweighting_set(const Matrix& features, const GroupedDataset& ds,
                                    DfrTarget target) {
  if (features.rows() != ds.size()) throw std::invalid_argument("feature rows != dataset size");
  ReweightingSet r;
  r.F = features;
  r.target = target == DfrTarget::ClassLabel ? ds.y : ds.s;
  r.groups = ds.g;
  r.num_targets = target == DfrTarget::ClassLabel ? ds.num_classes : ds.num_spurious;
  r.num_groups = ds.groups();
  return r;
}

namespace {

void require_all_groups(const ReweightingSet& d, const char* what) {
  std::vector<int> count(d.num_groups, 0);
  for (int g : d.groups) ++count.at(g);
  for (int g = 0; g < d.num_groups; ++g) {
    if (count[g] == 0) {
      throw ConfigError(std::string(what) + ": group " + std::to_string(g) + " has no examples");
    }
  }
}

ReweightingSet training_subset(const ReweightingSet& d, bool balanced, std::uint64_t seed) {
  if (!balanced) return d;
  return d.subset(balanced_subsample_rows(d.groups, d.num_groups, seed));
}

L1LogRegResult fit_at_c(const ReweightingSet& d, double c, const SolverConfig& solver) {
  return fit_l1_logreg(d.F, d.target, d.num_targets, lambda_from_c(c, d.size()), solver);
}

double wga_of(const L1LogRegResult& fit, const ReweightingSet& eval) {
  Matrix logits = eval.F * fit.W.transpose();
  logits.rowwise() += fit.b.transpose();
  return worst_group_accuracy(per_group_accuracy(argmax_rows(logits), eval.target, eval.groups));
}

}  // namespace

TuneResult dfr_tune(const ReweightingSet& half1, const ReweightingSet& half2, const DfrConfig& cfg) {
  cfg.validate();
  require_all_groups(half1, "tuning half 1");
  require_all_groups(half2, "tuning half 2");
  const ReweightingSet fit_set = training_subset(half1, cfg.balanced, derive_seed({cfg.seed, 0x7a11}));

  TuneResult out;
  double best_wga = -1.0;
  for (double c : cfg.c_grid) {
    const L1LogRegResult fit = fit_at_c(fit_set, c, cfg.solver);
    TuneRow row;
    row.c = c;
    row.val_wga = wga_of(fit, half2);
    row.sparsity = static_cast<double>((fit.W.array() == 0.0).count()) / static_cast<double>(fit.W.size());
    out.table.push_back(row);
    if (row.val_wga > best_wga || (row.val_wga == best_wga && c < out.chosen_c)) {
      best_wga = row.val_wga;
      out.chosen_c = c;
    }
  }
  return out;
}

DfrResult dfr_fit(const ReweightingSet& data, const DfrConfig& cfg) {
  cfg.validate();
  require_all_groups(data, "reweighting set");

  ReweightingSet work = data;
  StandardizeStats stats;
  if (cfg.standardize) {
    Standardized st = standardize_features(data.F);
    work.F = std::move(st.F);
    stats = st.stats;
  }

  // Group-stratified halves for choosing c.
  std::vector<Index> by_group(work.num_groups);
  for (int i = 0; i < work.size(); ++i) by_group[work.groups[i]].push_back(i);
  Index first, second;
  for (int g = 0; g < work.num_groups; ++g) {
    Index rows = by_group[g];
    if (rows.size() < 2) {
      throw ConfigError("group " + std::to_string(g) + " needs >= 2 examples to split for tuning");
    }
    Rng rng = make_rng(derive_seed({cfg.seed, 0x4a1f, static_cast<std::uint64_t>(g)}));
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto counts = largest_remainder_counts(static_cast<int>(rows.size()), {0.5, 0.5});
    first.insert(first.end(), rows.begin(), rows.begin() + counts[0]);
    second.insert(second.end(), rows.begin() + counts[0], rows.end());
  }

  DfrResult result;
  const TuneResult tuned = dfr_tune(work.subset(first), work.subset(second), cfg);
  result.chosen_c = tuned.chosen_c;
  result.per_c_val_wga = tuned.table;

  const int repeats = cfg.balanced ? cfg.repeats : 1;
  // Running mean, so averaging identical heads reproduces them exactly.
  Matrix W = Matrix::Zero(work.num_targets, work.F.cols());
  Vector b = Vector::Zero(work.num_targets);
  for (int r = 0; r < repeats; ++r) {
    const ReweightingSet sub =
        training_subset(work, cfg.balanced, derive_seed({cfg.seed, 0xdf2, static_cast<std::uint64_t>(r)}));
    const L1LogRegResult fit = fit_at_c(sub, result.chosen_c, cfg.solver);
    W += (fit.W - W) / static_cast<double>(r + 1);
    b += (fit.b - b) / static_cast<double>(r + 1);
  }
  result.repeats_used = repeats;

  // Fold standardization into the head so it applies to raw features.
  if (cfg.standardize) {
    const Vector scale = stats.std.cwiseMax(1e-12);
    result.head.W = W.array().rowwise() / scale.transpose().array();
    result.head.b = b - result.head.W * stats.mean;
  } else {
    result.head.W = W;
    result.head.b = b;
  }
  return result;
}

}  // namespace sfl
