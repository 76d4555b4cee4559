#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sfl/data.hpp"

namespace sfl {

/// Affine layer computing x -> W x + b, W is d_out x d_in.
struct Layer {
  Matrix W;
  Vector b;

  int in_dim() const { return static_cast<int>(W.cols()); }
  int out_dim() const { return static_cast<int>(W.rows()); }
};

/// Fully connected ReLU network m = h o e. The last layer is the linear head h;
/// everything before it is the feature extractor e.
struct ModelParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.front().in_dim(); }
  int num_classes() const { return layers.back().out_dim(); }
  /// Width of the feature space (input to the head).
  int feature_dim() const { return layers.back().in_dim(); }
  const Layer& head() const { return layers.back(); }

  /// Throws std::invalid_argument on broken chaining or non-finite entries.
  void validate() const;
  /// Same architecture, every entry zero.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
};

/// Widths are {d_in, hidden..., num_classes}. Weights ~ U(-a, a) with
/// a = sqrt(6 / (d_in + d_out)); biases start at zero.
ModelParams init_mlp(const std::vector<int>& widths, std::uint64_t seed);

struct ForwardCache {
  std::vector<Matrix> inputs;  // inputs[i] feeds layers[i]; inputs[0] is X
  std::vector<Matrix> pre;     // pre[i] = inputs[i] * W_i^T + b_i
};

struct ForwardResult {
  Matrix logits;  // n x K
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& p, const Matrix& X);

/// Logits only, without retaining the cache.
Matrix predict_logits(const ModelParams& p, const Matrix& X);

/// Penultimate activations e(X), n x feature_dim.
Matrix embed(const ModelParams& p, const Matrix& X);

/// Applies a head to precomputed features: F * W^T + b.
Matrix apply_head(const Layer& head, const Matrix& features);

Labels argmax_rows(const Matrix& logits);

struct CrossEntropyResult {
  double loss = 0.0;
  Vector per_example;
  Matrix grad_logits;
};

/// Weighted mean softmax cross-entropy. Without weights every example has weight 1.
/// grad_logits rows are w_i (softmax_i - onehot_i) / sum(w).
CrossEntropyResult cross_entropy(const Matrix& logits, const Labels& y,
                                 const std::optional<Vector>& sample_weights = std::nullopt);

/// Reverse-mode gradients of the loss whose logit gradient is `grad_logits`.
/// ReLU'(0) is taken as 0.
ModelParams backward(const ModelParams& p, const ForwardCache& cache, const Matrix& grad_logits);

/// Copy of `p` with the final layer swapped for `head`.
ModelParams replace_head(const ModelParams& p, const Layer& head);

}  // namespace sfl
