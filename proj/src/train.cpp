#include "sfl/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "sfl/rng.hpp"

namespace sfl {

std::string to_string(Method method) {
  switch (method) {
    case Method::ERM: return "ERM";
    case Method::RWY: return "RWY";
    case Method::RWG: return "RWG";
    case Method::GDRO: return "GDRO";
  }
  return "ERM";
}

Method method_from_string(const std::string& name) {
  if (name == "ERM") return Method::ERM;
  if (name == "RWY") return Method::RWY;
  if (name == "RWG") return Method::RWG;
  if (name == "GDRO") return Method::GDRO;
  throw ConfigError("unknown method '" + name + "' (expected ERM, RWY, RWG or GDRO)");
}

std::string TrainConfig::label() const {
  if (!name.empty()) return name;
  return to_string(method) + (early_stop ? "-ES" : "");
}

void TrainConfig::validate() const {
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if ((method == Method::GDRO) != gdro.has_value()) {
    throw ConfigError("gdro settings must be present exactly when method is GDRO");
  }
  if (gdro) {
    if (!(gdro->C >= 0.0)) throw ConfigError("gdro.C must be >= 0");
    if (!(gdro->eta_q > 0.0)) throw ConfigError("gdro.eta_q must be > 0");
  }
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
}

Sampler::Sampler(Method method, const GroupedDataset& ds, std::uint64_t seed)
    : method_(method), seed_(seed), n_(ds.size()) {
  if (ds.empty()) throw std::invalid_argument("sampler needs a nonempty dataset");
  if (method == Method::RWY) {
    buckets_.resize(ds.num_classes);
    for (int i = 0; i < n_; ++i) buckets_[ds.y[i]].push_back(i);
  } else if (method == Method::RWG) {
    buckets_ = ds.group_rows();
  }
  for (std::size_t b = 0; b < buckets_.size(); ++b) {
    if (buckets_[b].empty()) {
      throw ConfigError(std::string(method == Method::RWY ? "class " : "group ") +
                        std::to_string(b) + " is empty; cannot reweight");
    }
  }
}

Index Sampler::epoch(int epoch_number) const {
  Rng rng = make_rng(derive_seed({seed_, static_cast<std::uint64_t>(epoch_number)}));
  Index out;
  if (buckets_.empty()) {
    out.resize(n_);
    std::iota(out.begin(), out.end(), 0);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  out.reserve(n_);
  std::uniform_int_distribution<std::size_t> pick_bucket(0, buckets_.size() - 1);
  for (int i = 0; i < n_; ++i) {
    const Index& bucket = buckets_[pick_bucket(rng)];
    std::uniform_int_distribution<std::size_t> pick_row(0, bucket.size() - 1);
    out.push_back(bucket[pick_row(rng)]);
  }
  return out;
}

Sampler make_sampler(Method method, const GroupedDataset& ds, std::uint64_t seed) {
  return Sampler(method, ds, seed);
}

Vector adjusted_group_loss(const Vector& group_losses, const std::vector<int>& n_g, double C) {
  if (group_losses.size() != static_cast<Eigen::Index>(n_g.size())) {
    throw std::invalid_argument("group loss and group count lengths differ");
  }
  Vector out(group_losses.size());
  for (Eigen::Index g = 0; g < out.size(); ++g) {
    if (n_g[g] < 1) throw DomainError("group " + std::to_string(g) + " has no training examples");
    out(g) = group_losses(g) + C / std::sqrt(static_cast<double>(n_g[g]));
  }
  return out;
}

Vector gdro_update(const Vector& q, const Vector& adj_losses, double eta_q) {
  if (q.size() != adj_losses.size()) throw std::invalid_argument("q and losses lengths differ");
  if (!adj_losses.allFinite()) throw DomainError("non-finite group loss in gdro_update");
  Vector logits(q.size());
  for (Eigen::Index g = 0; g < q.size(); ++g) {
    logits(g) = q(g) > 0.0 ? std::log(q(g)) + eta_q * adj_losses(g)
                           : -std::numeric_limits<double>::infinity();
  }
  const double m = logits.maxCoeff();
  Vector out = (logits.array() - m).exp();
  return out / out.sum();
}

namespace {

Matrix gather_rows(const Matrix& X, const Index& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), X.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = X.row(idx[i]);
  return out;
}

Labels gather(const Labels& v, const Index& idx, std::size_t begin, std::size_t end) {
  Labels out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(v[idx[i]]);
  return out;
}

void check_compatible(const GroupedDataset& train_ds, const GroupedDataset& val_ds,
                      const ModelParams& p) {
  p.validate();
  if (train_ds.empty()) throw std::invalid_argument("training set is empty");
  if (train_ds.dim() != p.input_dim()) throw std::invalid_argument("model input width != feature dim");
  if (p.num_classes() != train_ds.num_classes) {
    throw std::invalid_argument("model output width != number of classes");
  }
  if (!val_ds.empty() && (val_ds.dim() != train_ds.dim() || val_ds.num_classes != train_ds.num_classes)) {
    throw std::invalid_argument("train and validation sets are incompatible");
  }
}

// Updates the weights of the groups present in the batch and leaves the mass of
// absent groups untouched.
void update_present_groups(Vector& q, const Vector& adj, const std::vector<bool>& present,
                           double eta_q) {
  std::vector<Eigen::Index> ids;
  for (Eigen::Index g = 0; g < q.size(); ++g) {
    if (present[g]) ids.push_back(g);
  }
  double mass = 0.0;
  Vector sub_q(static_cast<Eigen::Index>(ids.size()));
  Vector sub_l(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    sub_q(k) = q(ids[k]);
    sub_l(k) = adj(ids[k]);
    mass += q(ids[k]);
  }
  if (!(mass > 0.0)) return;
  if (ids.size() == static_cast<std::size_t>(q.size())) {
    q = gdro_update(q, adj, eta_q);
    return;
  }
  const Vector updated = gdro_update(sub_q / mass, sub_l, eta_q);
  for (std::size_t k = 0; k < ids.size(); ++k) q(ids[k]) = mass * updated(k);
}

}  // namespace

TrainResult train(const GroupedDataset& train_ds, const GroupedDataset& val_ds,
                  const ModelParams& model_init, const TrainConfig& cfg,
                  const CheckpointCallback& on_checkpoint) {
  cfg.validate();
  check_compatible(train_ds, val_ds, model_init);

  const int n = train_ds.size();
  const int G = train_ds.groups();
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  OptimizerConfig opt_cfg = cfg.optimizer;
  if (opt_cfg.total_steps == 0) opt_cfg.total_steps = std::max(1, cfg.epochs * steps_per_epoch);

  TrainResult result;
  result.final_params = model_init;
  result.best_params = model_init;
  if (cfg.epochs == 0) return result;
  if (val_ds.empty()) throw std::invalid_argument("validation set is empty");

  const GroupWeights train_dist = group_distribution(train_ds.n_per_group);
  const Sampler sampler(cfg.method == Method::GDRO ? Method::ERM : cfg.method, train_ds,
                        derive_seed({cfg.seed, 0x5a3d1e}));
  Optimizer optimizer(opt_cfg, model_init);
  ModelParams& params = result.final_params;

  const bool gdro = cfg.method == Method::GDRO;
  Vector q = Vector::Constant(G, 1.0 / G);
  double best_wga = -1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Index order = sampler.epoch(epoch);
    double loss_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = static_cast<std::size_t>(step) * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const Matrix Xb = gather_rows(train_ds.X, order, begin, end);
      const Labels yb = gather(train_ds.y, order, begin, end);
      ForwardResult fwd = forward(params, Xb);

      CrossEntropyResult ce;
      if (!gdro) {
        ce = cross_entropy(fwd.logits, yb);
      } else {
        const Labels gb = gather(train_ds.g, order, begin, end);
        const auto nb = static_cast<Eigen::Index>(gb.size());
        std::vector<int> count(G, 0);
        for (int gi : gb) ++count[gi];
        // Per-group mean losses need the unweighted per-example terms first.
        const CrossEntropyResult plain = cross_entropy(fwd.logits, yb);
        Vector group_loss = Vector::Zero(G);
        for (Eigen::Index i = 0; i < nb; ++i) group_loss(gb[i]) += plain.per_example(i);
        std::vector<bool> present(G, false);
        for (int g = 0; g < G; ++g) {
          present[g] = count[g] > 0;
          if (present[g]) group_loss(g) /= count[g];
        }
        const Vector adj = adjusted_group_loss(group_loss, train_ds.n_per_group, cfg.gdro->C);
        update_present_groups(q, adj, present, cfg.gdro->eta_q);

        double present_mass = 0.0;
        for (int g = 0; g < G; ++g) present_mass += present[g] ? q(g) : 0.0;
        Vector w(nb);
        for (Eigen::Index i = 0; i < nb; ++i) {
          w(i) = q(gb[i]) * (static_cast<double>(nb) / count[gb[i]]);
        }
        // Normalized by sum(w) = nb * present_mass; rescale so the gradient is
        // that of sum_g q_g * loss_g.
        ce = cross_entropy(fwd.logits, yb, w);
        ce.grad_logits *= present_mass;
        ce.per_example = plain.per_example;
      }
      if (!std::isfinite(ce.loss)) {
        std::ostringstream msg;
        msg << to_string(cfg.method) << " diverged at epoch " << epoch + 1 << " step " << step
            << " (lr=" << optimizer.current_lr() << ")";
        throw TrainingDiverged(msg.str());
      }
      loss_sum += ce.per_example.sum();
      const ModelParams grads = backward(params, fwd.cache, ce.grad_logits);
      optimizer.step(params, grads);
      ++result.steps;
    }

    const bool evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    if (!evaluate) continue;
    const Matrix val_logits = predict_logits(params, val_ds.X);
    const EvalReport rep = evaluate_logits(val_logits, val_ds, train_dist);
    EvalRecord rec;
    const Vector val_ce = cross_entropy(val_logits, val_ds.y).per_example;
    for (int i = 0; i < val_ds.size(); ++i) rec.val_group_loss[val_ds.g[i]] += val_ce(i);
    for (auto& [group, total] : rec.val_group_loss) total /= val_ds.n_per_group[group];
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_group_acc = rep.per_group_acc;
    rec.val_wga = rep.wga;
    rec.val_mean_acc = rep.mean_acc;
    result.history.push_back(rec);
    if (rep.wga > best_wga) {
      best_wga = rep.wga;
      result.best_epoch = rec.epoch;
      result.best_params = params;
    }
    if (on_checkpoint) on_checkpoint(rec.epoch, params);
  }
  if (gdro) result.final_q = q;
  return result;
}

}  // namespace sfl
