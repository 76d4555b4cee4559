#pragma once

#include <string>

#include "sfl/model.hpp"

namespace sfl {

enum class OptimizerKind { SGD, AdamW };
enum class Schedule { Cosine, Linear, Constant };

std::string to_string(OptimizerKind kind);
std::string to_string(Schedule schedule);
OptimizerKind optimizer_kind_from_string(const std::string& name);
Schedule schedule_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double lr0 = 3e-3;
  Schedule schedule = Schedule::Cosine;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Number of optimizer steps the schedule spans; train() fills it in from
  // epochs and batch size when left at 0.
  int total_steps = 0;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// lr0 * (1 + cos(pi t / T)) / 2.
double cosine_lr(int t, int total, double lr0);
/// lr0 * (1 - t / T).
double linear_lr(int t, int total, double lr0);
double scheduled_lr(const OptimizerConfig& cfg, int t);

/// Plain SGD with coupled L2 decay on weight matrices: w -= lr (g + wd w).
/// Biases are not decayed.
void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double wd);

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;

  static AdamState zeros_like(const ModelParams& p);
};

/// AdamW: bias-corrected moments, decoupled decay w -= lr wd w on weight matrices.
void adamw_step(AdamState& state, ModelParams& params, const ModelParams& grads, double lr,
                double wd, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Owns the optimizer state for one training loop.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ModelParams& params);

  /// Applies one update with the scheduled learning rate and advances the step.
  void step(ModelParams& params, const ModelParams& grads);
  int steps_taken() const { return t_; }
  double current_lr() const;

 private:
  OptimizerConfig cfg_;
  AdamState adam_;
  int t_ = 0;
};

}  // namespace sfl
