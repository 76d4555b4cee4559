#include "sfl/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sfl/rng.hpp"

namespace sfl {

namespace {

void require_input(const ModelParams& p, const Matrix& X) {
  if (p.layers.empty()) throw std::invalid_argument("model has no layers");
  if (X.cols() != p.input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(X.cols()) +
                                " columns, model expects " + std::to_string(p.input_dim()));
  }
}

Matrix affine(const Layer& layer, const Matrix& A) {
  Matrix Z = A * layer.W.transpose();
  Z.rowwise() += layer.b.transpose();
  return Z;
}

}  // namespace

void ModelParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.b.size() != l.W.rows()) {
      throw std::invalid_argument("layer " + std::to_string(i) + " bias size mismatch");
    }
    if (i > 0 && l.in_dim() != layers[i - 1].out_dim()) {
      throw std::invalid_argument("layer " + std::to_string(i) + " input does not chain");
    }
    if (!l.W.allFinite() || !l.b.allFinite()) {
      throw std::invalid_argument("layer " + std::to_string(i) + " has non-finite entries");
    }
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.layers.reserve(layers.size());
  for (const Layer& l : layers) {
    z.layers.push_back({Matrix::Zero(l.W.rows(), l.W.cols()), Vector::Zero(l.b.size())});
  }
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

ModelParams init_mlp(const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("need at least input and output widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("layer widths must be positive");
  }
  Rng rng = make_rng(seed);
  ModelParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int d_in = widths[i];
    const int d_out = widths[i + 1];
    const double a = std::sqrt(6.0 / (d_in + d_out));
    std::uniform_real_distribution<double> uni(-a, a);
    Layer l{Matrix(d_out, d_in), Vector::Zero(d_out)};
    for (int r = 0; r < d_out; ++r) {
      for (int c = 0; c < d_in; ++c) l.W(r, c) = uni(rng);
    }
    p.layers.push_back(std::move(l));
  }
  return p;
}

ForwardResult forward(const ModelParams& p, const Matrix& X) {
  require_input(p, X);
  ForwardResult out;
  const std::size_t L = p.layers.size();
  out.cache.inputs.reserve(L);
  out.cache.pre.reserve(L);
  out.cache.inputs.push_back(X);
  for (std::size_t i = 0; i < L; ++i) {
    out.cache.pre.push_back(affine(p.layers[i], out.cache.inputs[i]));
    if (i + 1 < L) out.cache.inputs.push_back(out.cache.pre[i].cwiseMax(0.0));
  }
  out.logits = out.cache.pre.back();
  return out;
}

Matrix predict_logits(const ModelParams& p, const Matrix& X) {
  require_input(p, X);
  Matrix A = X;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Matrix Z = affine(p.layers[i], A);
    A = (i + 1 < p.layers.size()) ? Matrix(Z.cwiseMax(0.0)) : std::move(Z);
  }
  return A;
}

Matrix embed(const ModelParams& p, const Matrix& X) {
  require_input(p, X);
  Matrix A = X;
  for (std::size_t i = 0; i + 1 < p.layers.size(); ++i) A = affine(p.layers[i], A).cwiseMax(0.0);
  return A;
}

Matrix apply_head(const Layer& head, const Matrix& features) {
  if (features.cols() != head.in_dim()) {
    throw std::invalid_argument("feature width does not match head input");
  }
  return affine(head, features);
}

Labels argmax_rows(const Matrix& logits) {
  Labels out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

CrossEntropyResult cross_entropy(const Matrix& logits, const Labels& y,
                                 const std::optional<Vector>& sample_weights) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index K = logits.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) throw std::invalid_argument("label count mismatch");
  if (n == 0) throw std::invalid_argument("cross_entropy on an empty batch");
  if (sample_weights && sample_weights->size() != n) {
    throw std::invalid_argument("sample weight count mismatch");
  }

  double total_weight = 0.0;
  if (sample_weights) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = (*sample_weights)(i);
      if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("sample weights must be finite and >= 0");
      total_weight += w;
    }
    if (total_weight <= 0.0) throw DomainError("all sample weights are zero");
  } else {
    total_weight = static_cast<double>(n);
  }

  CrossEntropyResult r;
  r.per_example.resize(n);
  r.grad_logits.resize(n, K);
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi < 0 || yi >= K) throw DomainError("label " + std::to_string(yi) + " out of range");
    const double m = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) z += std::exp(logits(i, k) - m);
    const double lse = m + std::log(z);
    r.per_example(i) = lse - logits(i, yi);
    const double w = sample_weights ? (*sample_weights)(i) : 1.0;
    weighted += w * r.per_example(i);
    for (Eigen::Index k = 0; k < K; ++k) {
      const double p = std::exp(logits(i, k) - lse);
      r.grad_logits(i, k) = w * (p - (k == yi ? 1.0 : 0.0)) / total_weight;
    }
  }
  r.loss = weighted / total_weight;
  return r;
}

ModelParams backward(const ModelParams& p, const ForwardCache& cache, const Matrix& grad_logits) {
  const std::size_t L = p.layers.size();
  if (cache.inputs.size() != L || cache.pre.size() != L) {
    throw std::invalid_argument("forward cache does not match model depth");
  }
  if (grad_logits.rows() != cache.inputs[0].rows() || grad_logits.cols() != p.num_classes()) {
    throw std::invalid_argument("grad_logits shape does not match cache");
  }
  ModelParams grads;
  grads.layers.resize(L);
  Matrix delta = grad_logits;
  for (std::size_t k = L; k-- > 0;) {
    const Layer& layer = p.layers[k];
    if (cache.inputs[k].cols() != layer.in_dim() || cache.pre[k].cols() != layer.out_dim()) {
      throw std::invalid_argument("stale forward cache at layer " + std::to_string(k));
    }
    grads.layers[k].W = delta.transpose() * cache.inputs[k];
    grads.layers[k].b = delta.colwise().sum().transpose();
    if (k > 0) {
      Matrix upstream = delta * layer.W;
      delta = (cache.pre[k - 1].array() > 0.0).select(upstream, 0.0);
    }
  }
  return grads;
}

ModelParams replace_head(const ModelParams& p, const Layer& head) {
  if (p.layers.empty()) throw std::invalid_argument("model has no layers");
  if (head.in_dim() != p.feature_dim() || head.out_dim() != p.num_classes() ||
      head.b.size() != head.W.rows()) {
    throw std::invalid_argument("replacement head has incompatible dimensions");
  }
  ModelParams out = p;
  out.layers.back() = head;
  return out;
}

}  // namespace sfl
