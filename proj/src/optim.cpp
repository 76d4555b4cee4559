#include "sfl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sfl {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::SGD ? "sgd" : "adamw"; }

std::string to_string(Schedule schedule) {
  switch (schedule) {
    case Schedule::Cosine: return "cosine";
    case Schedule::Linear: return "linear";
    case Schedule::Constant: return "constant";
  }
  return "constant";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + name + "'");
}

Schedule schedule_from_string(const std::string& name) {
  if (name == "cosine") return Schedule::Cosine;
  if (name == "linear") return Schedule::Linear;
  if (name == "constant") return Schedule::Constant;
  throw ConfigError("unknown lr schedule '" + name + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("optimizer.lr0 must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be > 0");
  if (total_steps < 0) throw ConfigError("optimizer.total_steps must be >= 0");
}

namespace {
void check_step(int t, int total) {
  if (total < 1) throw DomainError("schedule length must be >= 1");
  if (t < 0 || t > total) {
    throw DomainError("step " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  }
}

void check_shapes(const ModelParams& params, const ModelParams& grads) {
  if (params.layers.size() != grads.layers.size()) throw std::invalid_argument("gradient depth mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const Layer& p = params.layers[i];
    const Layer& g = grads.layers[i];
    if (p.W.rows() != g.W.rows() || p.W.cols() != g.W.cols() || p.b.size() != g.b.size()) {
      throw std::invalid_argument("gradient shape mismatch at layer " + std::to_string(i));
    }
    if (!g.W.allFinite() || !g.b.allFinite()) {
      throw std::invalid_argument("non-finite gradient at layer " + std::to_string(i));
    }
  }
}
}  // namespace

double cosine_lr(int t, int total, double lr0) {
  check_step(t, total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / total));
}

double linear_lr(int t, int total, double lr0) {
  check_step(t, total);
  return lr0 * (1.0 - static_cast<double>(t) / total);
}

double scheduled_lr(const OptimizerConfig& cfg, int t) {
  switch (cfg.schedule) {
    case Schedule::Cosine: return cosine_lr(t, cfg.total_steps, cfg.lr0);
    case Schedule::Linear: return linear_lr(t, cfg.total_steps, cfg.lr0);
    case Schedule::Constant: return cfg.lr0;
  }
  return cfg.lr0;
}

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double wd) {
  check_shapes(params, grads);
  if (!(lr >= 0.0)) throw DomainError("learning rate must be >= 0");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    Layer& p = params.layers[i];
    const Layer& g = grads.layers[i];
    p.W.array() -= lr * (g.W.array() + wd * p.W.array());
    p.b.array() -= lr * g.b.array();
  }
}

AdamState AdamState::zeros_like(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }

void adamw_step(AdamState& state, ModelParams& params, const ModelParams& grads, double lr,
                double wd, double beta1, double beta2, double eps) {
  check_shapes(params, grads);
  check_shapes(params, state.m);
  if (!(lr >= 0.0)) throw DomainError("learning rate must be >= 0");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  auto update = [&](auto& w, auto& m, auto& v, const auto& g, double decay) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.square();
    w -= lr * ((m / c1) / ((v / c2).sqrt() + eps)) + lr * decay * w;
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    Layer& p = params.layers[i];
    const Layer& g = grads.layers[i];
    auto mW = state.m.layers[i].W.array();
    auto vW = state.v.layers[i].W.array();
    auto pW = p.W.array();
    update(pW, mW, vW, g.W.array(), wd);
    auto mb = state.m.layers[i].b.array();
    auto vb = state.v.layers[i].b.array();
    auto pb = p.b.array();
    update(pb, mb, vb, g.b.array(), 0.0);
  }
}

Optimizer::Optimizer(OptimizerConfig cfg, const ModelParams& params) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.total_steps < 1) throw ConfigError("optimizer.total_steps must be >= 1");
  if (cfg_.kind == OptimizerKind::AdamW) adam_ = AdamState::zeros_like(params);
}

double Optimizer::current_lr() const { return scheduled_lr(cfg_, std::min(t_, cfg_.total_steps)); }

void Optimizer::step(ModelParams& params, const ModelParams& grads) {
  const double lr = current_lr();
  if (cfg_.kind == OptimizerKind::SGD) {
    sgd_step(params, grads, lr, cfg_.weight_decay);
  } else {
    adamw_step(adam_, params, grads, lr, cfg_.weight_decay, cfg_.beta1, cfg_.beta2, cfg_.epsilon);
  }
  ++t_;
}

}  // namespace sfl
