#pragma once

// Independent reference computations used by the tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sfl/dfr.hpp"
#include "sfl/model.hpp"
#include "sfl/rng.hpp"

namespace oracle {

using sfl::Labels;
using sfl::Matrix;
using sfl::ModelParams;
using sfl::Vector;

// Mean cross-entropy written out with plain loops.
inline double loop_loss(const ModelParams& p, const Matrix& X, const Labels& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<double> a;
    for (Eigen::Index j = 0; j < X.cols(); ++j) a.push_back(X(i, j));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& L = p.layers[l];
      std::vector<double> z(static_cast<std::size_t>(L.W.rows()));
      for (Eigen::Index r = 0; r < L.W.rows(); ++r) {
        double acc = L.b(r);
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) acc += L.W(r, c) * a[c];
        z[r] = (l + 1 < p.layers.size()) ? std::max(acc, 0.0) : acc;
      }
      a = z;
    }
    const double m = *std::max_element(a.begin(), a.end());
    double se = 0.0;
    for (double v : a) se += std::exp(v - m);
    total += m + std::log(se) - a[y[i]];
  }
  return total / static_cast<double>(X.rows());
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences of the loop loss. The
// relative error of a coordinate is |a - b| / max(|a|, |b|, floor).
inline GradCheck finite_difference_check(const ModelParams& p, const Matrix& X, const Labels& y,
                                         double h = 1e-5, double floor = 1e-7) {
  const auto fr = sfl::forward(p, X);
  const auto ce = sfl::cross_entropy(fr.logits, y);
  const ModelParams g = sfl::backward(p, fr.cache, ce.grad_logits);
  GradCheck out;
  ModelParams q = p;
  auto probe = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + h;
    const double up = loop_loss(q, X, y);
    slot = saved - h;
    const double down = loop_loss(q, X, y);
    slot = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic), floor});
    out.max_rel_err = std::max(out.max_rel_err, std::abs(fd - analytic) / denom);
    ++out.checked;
  };
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    for (Eigen::Index r = 0; r < q.layers[l].W.rows(); ++r) {
      for (Eigen::Index c = 0; c < q.layers[l].W.cols(); ++c) probe(q.layers[l].W(r, c), g.layers[l].W(r, c));
      probe(q.layers[l].b(r), g.layers[l].b(r));
    }
  }
  return out;
}

// O(n^2) Mann-Whitney AUC.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      num += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
      pairs += 1.0;
    }
  }
  return num / pairs;
}

// Smooth part of the l1 logistic objective and its gradient.
inline double smooth_loss(const Matrix& F, const Labels& t, const Matrix& W, const Vector& b, Matrix* gW,
                          Vector* gb) {
  const Eigen::Index n = F.rows(), K = W.rows();
  Matrix Z = F * W.transpose();
  Z.rowwise() += b.transpose();
  double loss = 0.0;
  Matrix G = Matrix::Zero(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = Z.row(i).maxCoeff();
    const Vector e = (Z.row(i).array() - m).exp();
    const double se = e.sum();
    loss += m + std::log(se) - Z(i, t[i]);
    G.row(i) = e.transpose() / se;
    G(i, t[i]) -= 1.0;
  }
  G /= static_cast<double>(n);
  if (gW) *gW = G.transpose() * F;
  if (gb) *gb = G.colwise().sum().transpose();
  return loss / static_cast<double>(n);
}

inline double l1_objective(const Matrix& F, const Labels& t, double lambda, const Matrix& W, const Vector& b) {
  return smooth_loss(F, t, W, b, nullptr, nullptr) + lambda * W.cwiseAbs().sum();
}

// Subgradient descent with the square-summable step 20 / (k + 10), from several
// starts; returns the lowest objective value seen. Slow and simple on purpose.
inline double subgradient_minimum(const Matrix& F, const Labels& t, int K, double lambda, long iters,
                                  int starts, std::uint64_t seed) {
  double best = INFINITY;
  sfl::Rng rng(seed);
  std::normal_distribution<double> normal;
  for (int s = 0; s < starts; ++s) {
    Matrix W = Matrix::Zero(K, F.cols());
    Vector b = Vector::Zero(K);
    if (s > 0) {
      for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = normal(rng);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = normal(rng);
    }
    Matrix gW;
    Vector gb;
    for (long k = 0; k < iters; ++k) {
      const double f = smooth_loss(F, t, W, b, &gW, &gb) + lambda * W.cwiseAbs().sum();
      best = std::min(best, f);
      gW += lambda * W.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
      const double step = 20.0 / static_cast<double>(k + 10);
      W -= step * gW;
      b -= step * gb;
    }
    best = std::min(best, l1_objective(F, t, lambda, W, b));
  }
  return best;
}

// Largest violation of the l1 optimality conditions at (W, b).
inline double kkt_residual(const Matrix& F, const Labels& t, double lambda, const Matrix& W, const Vector& b) {
  Matrix gW;
  Vector gb;
  smooth_loss(F, t, W, b, &gW, &gb);
  double worst = gb.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < W.size(); ++i) {
    const double w = W.data()[i], g = gW.data()[i];
    const double r = w == 0.0 ? std::max(0.0, std::abs(g) - lambda) : std::abs(g + lambda * (w > 0 ? 1.0 : -1.0));
    worst = std::max(worst, r);
  }
  return worst;
}

}  // namespace oracle
