#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/metrics.hpp"
#include "sfl/model.hpp"
#include "sfl/optim.hpp"

namespace sfl {

enum class Method { ERM, RWY, RWG, GDRO };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct GdroConfig {
  double C = 0.0;       // generalization adjustment
  double eta_q = 0.01;  // step size of the group-weight ascent

  bool operator==(const GdroConfig&) const = default;
};

struct TrainConfig {
  Method method = Method::ERM;
  OptimizerConfig optimizer;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::optional<GdroConfig> gdro;  // present iff method == GDRO
  bool early_stop = false;
  int eval_every = 1;
  std::vector<int> hidden{64, 32};
  std::string name;  // display label; defaults to e.g. "GDRO-ES"

  std::string label() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Index stream for one epoch.
/// ERM: a fresh permutation of all rows. RWY/RWG: n i.i.d. draws, each picking a
/// class (group) uniformly and then a row uniformly inside it.
/// GDRO uses the ERM stream.
class Sampler {
 public:
  Sampler(Method method, const GroupedDataset& ds, std::uint64_t seed);

  Index epoch(int epoch_number) const;
  Method method() const { return method_; }

 private:
  Method method_;
  std::uint64_t seed_;
  int n_;
  std::vector<Index> buckets_;  // classes (RWY) or groups (RWG)
};

Sampler make_sampler(Method method, const GroupedDataset& ds, std::uint64_t seed);

/// group_losses_g + C / sqrt(n_g).
Vector adjusted_group_loss(const Vector& group_losses, const std::vector<int>& n_g, double C);

/// Exponentiated-gradient ascent on the simplex: q'_g ∝ q_g exp(eta_q l_g),
/// evaluated in log space with max subtraction.
Vector gdro_update(const Vector& q, const Vector& adj_losses, double eta_q);

struct EvalRecord {
  int epoch = 0;
  double train_loss = 0.0;
  GroupAccuracy val_group_acc;
  std::map<int, double> val_group_loss;
  double val_wga = 0.0;
  double val_mean_acc = 0.0;
};

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;
  std::vector<EvalRecord> history;
  int best_epoch = 0;
  Vector final_q;  // group weights at the end of training (GDRO); empty otherwise
  long steps = 0;
};

/// Invoked after each evaluation with the epoch number and the current parameters.
using CheckpointCallback = std::function<void(int epoch, const ModelParams&)>;

/// Raised when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(const GroupedDataset& train_ds, const GroupedDataset& val_ds,
                  const ModelParams& model_init, const TrainConfig& cfg,
                  const CheckpointCallback& on_checkpoint = {});

}  // namespace sfl
