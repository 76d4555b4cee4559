#include "sfl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "sfl/io.hpp"
#include "sfl/rng.hpp"

namespace sfl {

using ojson = nlohmann::ordered_json;
using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::None: return "none";
    case SweepAxis::WeightDecay: return "weight_decay";
    case SweepAxis::EtaQ: return "eta_q";
    case SweepAxis::C: return "C";
    case SweepAxis::MarginRatio: return "margin_ratio";
  }
  return "none";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  for (SweepAxis a : {SweepAxis::None, SweepAxis::WeightDecay, SweepAxis::EtaQ, SweepAxis::C,
                      SweepAxis::MarginRatio}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (dataset.synthetic) {
    dataset.synthetic->validate();
  } else if (dataset.path.empty()) {
    throw ConfigError("dataset: needs either 'synthetic' or 'path'");
  }
  if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0)) {
    throw ConfigError("split: train, val and test fractions must all be positive");
  }
  if (methods.empty()) throw ConfigError("methods: at least one method is required");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    try {
      methods[i].validate();
    } catch (const ConfigError& e) {
      throw ConfigError("methods[" + std::to_string(i) + "]: " + e.what());
    }
    const std::string label = methods[i].label();
    if (label.find_first_of(",\n\"") != std::string::npos) {
      throw ConfigError("methods[" + std::to_string(i) + "].name: must not contain commas or quotes");
    }
    if (!labels.insert(label).second) {
      throw ConfigError("methods[" + std::to_string(i) + "]: duplicate method label '" + label + "'");
    }
  }
  try {
    dfr.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dfr: ") + e.what());
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: values must be distinct");
  }
  if (sweep.axis == SweepAxis::None) {
    if (!sweep.values.empty()) throw ConfigError("sweep.values: given without a sweep axis");
  } else {
    if (sweep.values.empty()) throw ConfigError("sweep.values: at least one value is required");
    if (std::set<double>(sweep.values.begin(), sweep.values.end()).size() != sweep.values.size()) {
      throw ConfigError("sweep.values: values must be distinct");
    }
    for (double v : sweep.values) {
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("sweep.values: values must be finite and >= 0");
    }
    if (sweep.axis == SweepAxis::MarginRatio && !dataset.synthetic) {
      throw ConfigError("sweep.axis: margin_ratio needs a synthetic dataset");
    }
  }
  if (workers < 1) throw ConfigError("workers: must be >= 1");
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError((path.empty() ? std::string("<root>") : path) + ": " + msg);
}

template <class T>
T convert(const json& j, const std::string& path);

template <>
double convert<double>(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

template <>
int convert<int>(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  const auto v = j.get<long long>();
  if (v < INT32_MIN || v > INT32_MAX) fail(path, "integer out of range");
  return static_cast<int>(v);
}

template <>
std::uint64_t convert<std::uint64_t>(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0) return static_cast<std::uint64_t>(j.get<long long>());
  fail(path, "expected a non-negative integer");
}

template <>
bool convert<bool>(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

template <>
std::string convert<std::string>(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

template <class T>
std::vector<T> convert_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(convert<T>(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

template <>
std::vector<double> convert<std::vector<double>>(const json& j, const std::string& path) {
  return convert_list<double>(j, path);
}
template <>
std::vector<int> convert<std::vector<int>>(const json& j, const std::string& path) {
  return convert_list<int>(j, path);
}
template <>
std::vector<std::uint64_t> convert<std::vector<std::uint64_t>>(const json& j, const std::string& path) {
  return convert_list<std::uint64_t>(j, path);
}

// An object whose fields are consumed one by one; leftovers are reported.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void opt(const std::string& key, T& out) {
    if (has(key)) out = convert<T>(raw(key), sub(key));
  }

  template <class T>
  T req(const std::string& key) {
    if (!has(key)) fail(sub(key), "missing required field");
    return convert<T>(raw(key), sub(key));
  }

  // Parses a string field through an enum converter, attributing errors to the field.
  template <class E, class F>
  void opt_enum(const std::string& key, E& out, F from_string) {
    if (!has(key)) return;
    const std::string name = convert<std::string>(raw(key), sub(key));
    try {
      out = from_string(name);
    } catch (const std::exception& e) {
      fail(sub(key), e.what());
    }
  }

  void done() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(sub(item.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Re-labels validation errors of a sub-config with its path.
template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

SyntheticConfig synthetic_from(const json& j, const std::string& path) {
  Fields f(j, path);
  SyntheticConfig c;
  f.opt("n_total", c.n_total);
  f.opt("num_classes", c.num_classes);
  f.opt("num_spurious", c.num_spurious);
  f.opt_enum("group_mode", c.group_mode, group_mode_from_string);
  f.opt("group_proportions", c.group_proportions);
  f.opt("d_core", c.d_core);
  f.opt("d_spur", c.d_spur);
  f.opt("d_noise", c.d_noise);
  f.opt("margin_core", c.margin_core);
  f.opt("margin_spur", c.margin_spur);
  f.opt("sigma_core", c.sigma_core);
  f.opt("sigma_spur", c.sigma_spur);
  f.opt("sigma_noise", c.sigma_noise);
  f.opt("seed", c.seed);
  f.done();
  checked(path, [&] { c.validate(); });
  return c;
}

OptimizerConfig optimizer_from(const json& j, const std::string& path) {
  Fields f(j, path);
  OptimizerConfig c;
  f.opt_enum("kind", c.kind, optimizer_kind_from_string);
  f.opt("lr0", c.lr0);
  f.opt_enum("schedule", c.schedule, schedule_from_string);
  f.opt("weight_decay", c.weight_decay);
  f.opt("beta1", c.beta1);
  f.opt("beta2", c.beta2);
  f.opt("epsilon", c.epsilon);
  f.opt("total_steps", c.total_steps);
  f.done();
  checked(path, [&] { c.validate(); });
  return c;
}

TrainConfig method_from(const json& j, const std::string& path) {
  Fields f(j, path);
  TrainConfig c;
  if (!f.has("method")) fail(f.sub("method"), "missing required field");
  f.opt_enum("method", c.method, method_from_string);
  f.opt("name", c.name);
  if (f.has("optimizer")) c.optimizer = optimizer_from(f.raw("optimizer"), f.sub("optimizer"));
  f.opt("batch_size", c.batch_size);
  f.opt("epochs", c.epochs);
  f.opt("seed", c.seed);
  f.opt("early_stop", c.early_stop);
  f.opt("eval_every", c.eval_every);
  f.opt("hidden", c.hidden);
  if (f.has("gdro")) {
    Fields g(f.raw("gdro"), f.sub("gdro"));
    GdroConfig gc;
    g.opt("C", gc.C);
    g.opt("eta_q", gc.eta_q);
    g.done();
    c.gdro = gc;
  } else if (c.method == Method::GDRO) {
    c.gdro = GdroConfig{};
  }
  f.done();
  checked(path, [&] { c.validate(); });
  return c;
}

DfrConfig dfr_from(const json& j, const std::string& path) {
  Fields f(j, path);
  DfrConfig c;
  f.opt("c_grid", c.c_grid);
  f.opt("repeats", c.repeats);
  f.opt_enum("target", c.target, dfr_target_from_string);
  f.opt("standardize", c.standardize);
  f.opt("balanced", c.balanced);
  f.opt("seed", c.seed);
  if (f.has("solver")) {
    Fields s(f.raw("solver"), f.sub("solver"));
    s.opt("max_iters", c.solver.max_iters);
    s.opt("tol", c.solver.tol);
    s.opt("kkt_tol", c.solver.kkt_tol);
    s.done();
  }
  f.done();
  checked(path, [&] { c.validate(); });
  return c;
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

ojson synthetic_json(const SyntheticConfig& c) {
  ojson j;
  j["n_total"] = c.n_total;
  j["num_classes"] = c.num_classes;
  j["num_spurious"] = c.num_spurious;
  j["group_mode"] = to_string(c.group_mode);
  j["group_proportions"] = c.group_proportions;
  j["d_core"] = c.d_core;
  j["d_spur"] = c.d_spur;
  j["d_noise"] = c.d_noise;
  j["margin_core"] = c.margin_core;
  j["margin_spur"] = c.margin_spur;
  j["sigma_core"] = c.sigma_core;
  j["sigma_spur"] = c.sigma_spur;
  j["sigma_noise"] = c.sigma_noise;
  j["seed"] = c.seed;
  return j;
}

ojson method_json(const TrainConfig& c) {
  ojson j;
  j["method"] = to_string(c.method);
  if (!c.name.empty()) j["name"] = c.name;
  ojson o;
  o["kind"] = to_string(c.optimizer.kind);
  o["lr0"] = c.optimizer.lr0;
  o["schedule"] = to_string(c.optimizer.schedule);
  o["weight_decay"] = c.optimizer.weight_decay;
  o["beta1"] = c.optimizer.beta1;
  o["beta2"] = c.optimizer.beta2;
  o["epsilon"] = c.optimizer.epsilon;
  o["total_steps"] = c.optimizer.total_steps;
  j["optimizer"] = o;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["early_stop"] = c.early_stop;
  j["eval_every"] = c.eval_every;
  j["hidden"] = c.hidden;
  if (c.gdro) j["gdro"] = ojson{{"C", c.gdro->C}, {"eta_q", c.gdro->eta_q}};
  return j;
}

ojson dfr_json(const DfrConfig& c) {
  ojson j;
  j["c_grid"] = c.c_grid;
  j["repeats"] = c.repeats;
  j["target"] = to_string(c.target);
  j["standardize"] = c.standardize;
  j["balanced"] = c.balanced;
  j["seed"] = c.seed;
  j["solver"] = ojson{{"max_iters", c.solver.max_iters}, {"tol", c.solver.tol}, {"kkt_tol", c.solver.kkt_tol}};
  return j;
}

ojson config_json(const ExperimentConfig& cfg) {
  ojson j;
  if (cfg.dataset.synthetic) {
    j["dataset"] = ojson{{"synthetic", synthetic_json(*cfg.dataset.synthetic)}};
  } else {
    j["dataset"] = ojson{{"path", cfg.dataset.path}};
  }
  j["split"] = ojson{{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test},
                     {"seed", cfg.split_seed}};
  ojson methods = ojson::array();
  for (const TrainConfig& m : cfg.methods) methods.push_back(method_json(m));
  j["methods"] = methods;
  j["dfr"] = dfr_json(cfg.dfr);
  j["sweep"] = ojson{{"axis", to_string(cfg.sweep.axis)}, {"values", cfg.sweep.values}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["workers"] = cfg.workers;
  j["track_dfr"] = cfg.track_dfr;
  return j;
}

}  // namespace

SyntheticConfig parse_synthetic_config(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  // Accept either a bare synthetic block or one wrapped as {"synthetic": {...}}.
  if (j.is_object() && j.size() == 1 && j.contains("synthetic")) return synthetic_from(j["synthetic"], "synthetic");
  return synthetic_from(j, "");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  const json j = parse_json_text(json_text);
  Fields f(j, "");
  ExperimentConfig cfg;

  {
    if (!f.has("dataset")) fail("dataset", "missing required field");
    Fields d(f.raw("dataset"), "dataset");
    if (d.has("synthetic") == d.has("path")) fail("dataset", "needs exactly one of 'synthetic' or 'path'");
    if (d.has("synthetic")) {
      cfg.dataset.synthetic = synthetic_from(d.raw("synthetic"), "dataset.synthetic");
    } else {
      cfg.dataset.path = d.req<std::string>("path");
    }
    d.done();
  }
  if (f.has("split")) {
    Fields s(f.raw("split"), "split");
    s.opt("train", cfg.split.train);
    s.opt("val", cfg.split.val);
    s.opt("test", cfg.split.test);
    s.opt("seed", cfg.split_seed);
    s.done();
  }
  {
    if (!f.has("methods")) fail("methods", "missing required field");
    const json& ms = f.raw("methods");
    if (!ms.is_array()) fail("methods", "expected an array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      cfg.methods.push_back(method_from(ms[i], "methods[" + std::to_string(i) + "]"));
    }
  }
  if (f.has("dfr")) cfg.dfr = dfr_from(f.raw("dfr"), "dfr");
  if (f.has("sweep")) {
    Fields s(f.raw("sweep"), "sweep");
    s.opt_enum("axis", cfg.sweep.axis, sweep_axis_from_string);
    s.opt("values", cfg.sweep.values);
    s.done();
  }
  f.opt("seeds", cfg.seeds);
  f.opt("output_dir", cfg.output_dir);
  f.opt("workers", cfg.workers);
  f.opt("track_dfr", cfg.track_dfr);
  f.done();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment_config(io::read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  // Dataset paths are relative to the config file.
  if (!cfg.dataset.synthetic && fs::path(cfg.dataset.path).is_relative()) {
    cfg.dataset.path = (path.parent_path() / cfg.dataset.path).lexically_normal().string();
  }
  return cfg;
}

std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  return config_json(cfg).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

std::uint64_t run_seed(std::uint64_t experiment_seed, std::size_t method_index, std::size_t sweep_index,
                       std::size_t repetition) {
  return derive_seed({experiment_seed, method_index, sweep_index, repetition});
}

GroupedDataset materialize_dataset(const ExperimentConfig& cfg, std::optional<double> margin_ratio) {
  if (!cfg.dataset.synthetic) {
    if (margin_ratio) throw ConfigError("margin_ratio sweep needs a synthetic dataset");
    return io::read_dataset(cfg.dataset.path);
  }
  SyntheticConfig sc = *cfg.dataset.synthetic;
  if (margin_ratio) sc.margin_spur = *margin_ratio * sc.margin_core;
  return generate_synthetic(sc);
}

TrainConfig apply_sweep(const TrainConfig& method, SweepAxis axis, double value) {
  TrainConfig m = method;
  switch (axis) {
    case SweepAxis::WeightDecay: m.optimizer.weight_decay = value; break;
    case SweepAxis::EtaQ:
      if (m.gdro) m.gdro->eta_q = value;
      break;
    case SweepAxis::C:
      if (m.gdro) m.gdro->C = value;
      break;
    case SweepAxis::None:
    case SweepAxis::MarginRatio: break;
  }
  return m;
}

namespace {

struct DfrScores {
  double wga = 0.0;
  double s_wga = 0.0;
  DfrResult y_head;
  DfrResult s_head;
  EvalReport y_report;
};

DfrScores run_dfr(const ModelParams& params, const DatasetSplit& data, const DfrConfig& base,
                  std::uint64_t seed, const GroupWeights& train_dist) {
  const Matrix F_val = embed(params, data.val.X);
  const Matrix F_test = embed(params, data.test.X);
  DfrScores out;

  DfrConfig cy = base;
  cy.target = DfrTarget::ClassLabel;
  cy.seed = derive_seed({seed, 1});
  out.y_head = dfr_fit(make_reweighting_set(F_val, data.val, cy.target), cy);
  out.y_report = evaluate_logits(apply_head(out.y_head.head, F_test), data.test, train_dist);
  out.wga = out.y_report.wga;

  DfrConfig cs = base;
  cs.target = DfrTarget::SpuriousAttribute;
  cs.seed = derive_seed({seed, 2});
  out.s_head = dfr_fit(make_reweighting_set(F_val, data.val, cs.target), cs);
  out.s_wga = evaluate_spurious_logits(apply_head(out.s_head.head, F_test), data.test, train_dist).wga;
  return out;
}

std::string train_length_csv(const std::vector<TrainLengthRow>& rows) {
  std::string text = "epoch,base_wga,dfr_wga,dfr_s_wga\n";
  for (const TrainLengthRow& r : rows) {
    text += std::to_string(r.epoch) + "," + io::format_double(r.base_wga) + "," + io::format_double(r.dfr_wga) +
            "," + io::format_double(r.dfr_s_wga) + "\n";
  }
  return text;
}

}  // namespace

RunOutput execute_run(const DatasetSplit& data, const TrainConfig& method, std::uint64_t seed,
                      const DfrConfig& dfr, bool track_dfr, const fs::path& run_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const GroupWeights train_dist = group_distribution(data.train.n_per_group);

  std::vector<int> widths{data.train.dim()};
  widths.insert(widths.end(), method.hidden.begin(), method.hidden.end());
  widths.push_back(data.train.num_classes);
  const ModelParams init = init_mlp(widths, derive_seed({seed, 1}));

  TrainConfig tc = method;
  tc.seed = derive_seed({seed, 2});
  const std::uint64_t dfr_seed = derive_seed({seed, 3});

  RunOutput out;
  CheckpointCallback on_checkpoint;
  if (track_dfr) {
    on_checkpoint = [&](int epoch, const ModelParams& p) {
      TrainLengthRow row;
      row.epoch = epoch;
      row.base_wga = evaluate_logits(predict_logits(p, data.test.X), data.test, train_dist).wga;
      const DfrScores s = run_dfr(p, data, dfr, dfr_seed, train_dist);
      row.dfr_wga = s.wga;
      row.dfr_s_wga = s.s_wga;
      out.train_length.push_back(row);
    };
  }

  const TrainResult tr = train(data.train, data.val, init, tc, on_checkpoint);
  const ModelParams& chosen = method.early_stop ? tr.best_params : tr.final_params;
  const int chosen_epoch = method.early_stop ? tr.best_epoch : method.epochs;

  bool renormalized = false;
  EvalReport base = evaluate_logits(predict_logits(chosen, data.test.X), data.test, train_dist);
  mean_accuracy_train_weighted(base.per_group_acc, train_dist, &renormalized);
  if (renormalized) {
    std::cerr << "warning: some training groups are absent from the test split; "
                 "mean accuracy uses renormalized weights\n";
  }
  const DfrScores scores = run_dfr(chosen, data, dfr, dfr_seed, train_dist);

  RunRecord& r = out.record;
  r.method = method.label();
  r.base_wga = base.wga;
  r.base_mean_acc = base.mean_acc;
  r.dfr_wga = scores.wga;
  r.dfr_s_wga = scores.s_wga;
  r.best_epoch = chosen_epoch;
  r.chosen_c = scores.y_head.chosen_c;
  r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    io::save_checkpoint(run_dir / "checkpoint.json", {chosen, seed, chosen_epoch});
    io::write_history(run_dir / "history.csv", tr.history);
    io::save_dfr_result(run_dir / "dfr.json", scores.y_head, DfrTarget::ClassLabel);
    io::save_dfr_result(run_dir / "dfr_s.json", scores.s_head, DfrTarget::SpuriousAttribute);
    io::write_tuning_table(run_dir / "dfr_tuning.csv", scores.y_head.per_c_val_wga);
    ojson ev;
    ev["base"] = ojson::parse(io::eval_report_json(base));
    ev["dfr"] = ojson::parse(io::eval_report_json(scores.y_report));
    ev["dfr_s_wga"] = scores.s_wga;
    io::write_text(run_dir / "eval.json", ev.dump(2) + "\n");
    if (track_dfr) io::write_text(run_dir / "trainlen.csv", train_length_csv(out.train_length));
  }
  return out;
}

fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SFL_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
      return fs::path(root) / p;
    }
  }
  return p;
}

namespace {

struct Job {
  std::size_t method = 0;
  std::size_t sweep = 0;
  std::size_t rep = 0;
};

std::string run_dir_name(const std::string& label, std::uint64_t seed, SweepAxis axis, double value) {
  std::string name;
  for (char ch : label) name += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  name += "__seed" + std::to_string(seed);
  if (axis != SweepAxis::None) name += "__" + to_string(axis) + "_" + io::format_double(value);
  return name;
}

std::string runtime_csv(const std::vector<RunRecord>& records) {
  std::string text = "method,seed,sweep_axis,sweep_value,runtime_s\n";
  for (const RunRecord& r : records) {
    text += r.method + "," + std::to_string(r.seed) + "," + r.sweep_axis + "," + io::format_double(r.sweep_value) +
            "," + io::format_double(r.runtime_s) + "\n";
  }
  return text;
}

ojson record_json(const RunRecord& r) {
  ojson j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["sweep_axis"] = r.sweep_axis;
  j["sweep_value"] = r.sweep_value;
  j["base_wga"] = r.base_wga;
  j["base_mean_acc"] = r.base_mean_acc;
  j["dfr_wga"] = r.dfr_wga;
  j["dfr_s_wga"] = r.dfr_s_wga;
  j["best_epoch"] = r.best_epoch;
  j["chosen_c"] = r.chosen_c;
  return j;
}

ojson summary_json(const SummaryRow& s) {
  ojson j;
  j["method"] = s.method;
  j["sweep_axis"] = s.sweep_axis;
  j["sweep_value"] = s.sweep_value;
  j["n"] = s.n;
  j["base_wga"] = {s.base_wga_mean, s.base_wga_std};
  j["base_mean_acc"] = {s.base_mean_acc_mean, s.base_mean_acc_std};
  j["dfr_wga"] = {s.dfr_wga_mean, s.dfr_wga_std};
  j["dfr_s_wga"] = {s.dfr_s_wga_mean, s.dfr_s_wga_std};
  j["gap"] = s.gap_mean;
  j["single_seed"] = s.single_seed;
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out_dir = resolve_output_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  const fs::path marker = out_dir / "INCOMPLETE";
  io::write_text(marker, "experiment in progress or aborted\n");
  io::write_text(out_dir / "config.json", serialize_experiment_config(cfg));

  const bool swept = cfg.sweep.axis != SweepAxis::None;
  const std::vector<double> sweep_values = swept ? cfg.sweep.values : std::vector<double>{0.0};

  // Data for every sweep point, split once up front.
  std::vector<DatasetSplit> splits;
  std::optional<DatasetSplit> shared;
  for (double v : sweep_values) {
    if (cfg.sweep.axis == SweepAxis::MarginRatio) {
      splits.push_back(split(materialize_dataset(cfg, v), cfg.split, cfg.split_seed));
    } else {
      if (!shared) shared = split(materialize_dataset(cfg, std::nullopt), cfg.split, cfg.split_seed);
      splits.push_back(*shared);
    }
  }

  std::vector<Job> jobs;
  for (std::size_t v = 0; v < sweep_values.size(); ++v) {
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      for (std::size_t r = 0; r < cfg.seeds.size(); ++r) jobs.push_back({m, v, r});
    }
  }

  std::vector<std::optional<RunOutput>> outputs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  std::string error;

  auto worker = [&] {
    while (!stop) {
      const std::size_t k = next++;
      if (k >= jobs.size()) return;
      const Job& job = jobs[k];
      const double value = sweep_values[job.sweep];
      const TrainConfig method = apply_sweep(cfg.methods[job.method], cfg.sweep.axis, value);
      const std::uint64_t seed = cfg.seeds[job.rep];
      try {
        const fs::path run_dir = out_dir / "runs" / run_dir_name(method.label(), seed, cfg.sweep.axis, value);
        RunOutput o = execute_run(splits[job.sweep], method,
                                  run_seed(seed, job.method, job.sweep, job.rep), cfg.dfr, cfg.track_dfr,
                                  run_dir);
        o.record.seed = seed;
        o.record.sweep_axis = to_string(cfg.sweep.axis);
        o.record.sweep_value = swept ? value : 0.0;
        outputs[k] = std::move(o);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (error.empty()) {
          error = method.label() + " seed " + std::to_string(seed) + ": " + e.what();
        }
        stop = true;
      }
    }
  };

  const int n_threads = std::min<int>(cfg.workers, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  ExperimentResult result;
  std::string trainlen = "method,seed,sweep_axis,sweep_value,epoch,base_wga,dfr_wga,dfr_s_wga\n";
  for (const auto& o : outputs) {
    if (!o) continue;
    result.records.push_back(o->record);
    for (const TrainLengthRow& row : o->train_length) {
      trainlen += o->record.method + "," + std::to_string(o->record.seed) + "," + o->record.sweep_axis + "," +
                  io::format_double(o->record.sweep_value) + "," + std::to_string(row.epoch) + "," +
                  io::format_double(row.base_wga) + "," + io::format_double(row.dfr_wga) + "," +
                  io::format_double(row.dfr_s_wga) + "\n";
    }
  }
  result.complete = result.records.size() == jobs.size();
  result.error = error;

  const std::vector<SummaryRow> summary = summarize(result.records);
  io::write_text(out_dir / "records.csv", records_csv(result.records));
  io::write_text(out_dir / "runtime.csv", runtime_csv(result.records));
  io::write_text(out_dir / "summary.csv", summary_csv(summary));
  if (cfg.track_dfr) io::write_text(out_dir / "trainlen.csv", trainlen);

  ojson doc;
  doc["complete"] = result.complete;
  doc["config"] = config_json(cfg);
  ojson recs = ojson::array();
  for (const RunRecord& r : result.records) recs.push_back(record_json(r));
  doc["records"] = recs;
  ojson sums = ojson::array();
  for (const SummaryRow& s : summary) sums.push_back(summary_json(s));
  doc["summary"] = sums;
  io::write_text(out_dir / "results.json", doc.dump(2) + "\n");

  if (result.complete) {
    fs::remove(marker);
  } else {
    io::write_text(marker, "aborted after " + std::to_string(result.records.size()) + " of " +
                               std::to_string(jobs.size()) + " runs: " + error + "\n");
  }
  return result;
}

ExperimentResult run_experiment(const fs::path& config_path) {
  return run_experiment(load_experiment_config(config_path));
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kRecordHeader =
    "method,seed,sweep_axis,sweep_value,base_wga,base_mean_acc,dfr_wga,dfr_s_wga,best_epoch,chosen_c";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw io::FormatError("records line " + std::to_string(line) + ": bad number '" + s + "'");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

std::string records_csv(const std::vector<RunRecord>& records) {
  std::string text = std::string(kRecordHeader) + "\n";
  for (const RunRecord& r : records) {
    text += r.method + "," + std::to_string(r.seed) + "," + r.sweep_axis + "," + io::format_double(r.sweep_value) +
            "," + io::format_double(r.base_wga) + "," + io::format_double(r.base_mean_acc) + "," +
            io::format_double(r.dfr_wga) + "," + io::format_double(r.dfr_s_wga) + "," +
            std::to_string(r.best_epoch) + "," + io::format_double(r.chosen_c) + "\n";
  }
  return text;
}

std::vector<RunRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRecordHeader) throw io::FormatError("records: unexpected header");
  std::vector<RunRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 10) throw io::FormatError("records line " + std::to_string(line_no) + ": expected 10 fields");
    RunRecord r;
    r.method = f[0];
    try {
      r.seed = std::stoull(f[1]);
      r.best_epoch = std::stoi(f[8]);
    } catch (const std::exception&) {
      throw io::FormatError("records line " + std::to_string(line_no) + ": bad integer");
    }
    r.sweep_axis = f[2];
    r.sweep_value = to_double(f[3], line_no);
    r.base_wga = to_double(f[4], line_no);
    r.base_mean_acc = to_double(f[5], line_no);
    r.dfr_wga = to_double(f[6], line_no);
    r.dfr_s_wga = to_double(f[7], line_no);
    r.chosen_c = to_double(f[9], line_no);
    out.push_back(r);
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_std of an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
  std::vector<std::tuple<std::string, std::string, double>> keys;
  std::map<std::tuple<std::string, std::string, double>, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : records) {
    auto key = std::make_tuple(r.method, r.sweep_axis, r.sweep_value);
    auto& members = groups[key];
    if (members.empty()) keys.push_back(key);
    members.push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : keys) {
    const auto& members = groups[key];
    std::vector<double> base, mean_acc, dfr, dfr_s, gap;
    for (const RunRecord* r : members) {
      base.push_back(r->base_wga);
      mean_acc.push_back(r->base_mean_acc);
      dfr.push_back(r->dfr_wga);
      dfr_s.push_back(r->dfr_s_wga);
      gap.push_back(r->dfr_wga - r->base_wga);
    }
    SummaryRow s;
    std::tie(s.method, s.sweep_axis, s.sweep_value) = key;
    s.n = static_cast<int>(members.size());
    std::tie(s.base_wga_mean, s.base_wga_std) = mean_std(base);
    std::tie(s.base_mean_acc_mean, s.base_mean_acc_std) = mean_std(mean_acc);
    std::tie(s.dfr_wga_mean, s.dfr_wga_std) = mean_std(dfr);
    std::tie(s.dfr_s_wga_mean, s.dfr_s_wga_std) = mean_std(dfr_s);
    s.gap_mean = mean_std(gap).first;
    s.single_seed = s.n == 1;
    rows.push_back(s);
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string text =
      "method,sweep_axis,sweep_value,n,base_wga_mean,base_wga_std,base_mean_acc_mean,base_mean_acc_std,"
      "dfr_wga_mean,dfr_wga_std,dfr_s_wga_mean,dfr_s_wga_std,gap_mean\n";
  for (const SummaryRow& s : rows) {
    text += s.method + "," + s.sweep_axis + "," + io::format_double(s.sweep_value) + "," + std::to_string(s.n);
    for (double v : {s.base_wga_mean, s.base_wga_std, s.base_mean_acc_mean, s.base_mean_acc_std, s.dfr_wga_mean,
                     s.dfr_wga_std, s.dfr_s_wga_mean, s.dfr_s_wga_std, s.gap_mean}) {
      text += "," + io::format_double(v);
    }
    text += "\n";
  }
  return text;
}

std::string compare_report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("compare_report needs at least one record");
  const std::vector<SummaryRow> rows = summarize(records);
  bool swept = false, any_single = false;
  std::size_t width = 6;
  for (const SummaryRow& s : rows) {
    swept = swept || s.sweep_axis != "none";
    any_single = any_single || s.single_seed;
    width = std::max(width, s.method.size() + 1);
  }
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  std::string out = pad("method", width + 2);
  if (swept) out += pad(rows.front().sweep_axis, 14);
  out += pad("n", 4) + pad("base_wga", 20) + pad("dfr_wga", 20) + "gap\n";
  for (const SummaryRow& s : rows) {
    out += pad(s.method + (s.single_seed ? "*" : ""), width + 2);
    if (swept) out += pad(io::format_double(s.sweep_value), 14);
    out += pad(std::to_string(s.n), 4);
    out += pad(fmt("%.4f", s.base_wga_mean) + " ± " + fmt("%.4f", s.base_wga_std), 20);
    out += pad(fmt("%.4f", s.dfr_wga_mean) + " ± " + fmt("%.4f", s.dfr_wga_std), 20);
    out += fmt("%+.4f", s.gap_mean) + "\n";
  }
  if (any_single) out += "* single seed: standard deviation reported as 0\n";
  return out;
}

}  // namespace sfl
