// sfl: command-line front end for dataset generation, training, last-layer
// retraining, evaluation and full experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfl/experiment.hpp"
#include "sfl/io.hpp"
#include "sfl/rng.hpp"

namespace fs = std::filesystem;
using namespace sfl;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadConfig = 2;
constexpr int kIncomplete = 3;

struct DataOptions {
  std::string config;
  std::string data;
  double train = 0.4, val = 0.3, test = 0.3;
  std::uint64_t split_seed = 0;
  CLI::Option* train_opt = nullptr;
  CLI::Option* val_opt = nullptr;
  CLI::Option* test_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("-c,--config", d.config, "experiment config (dataset and split are taken from it)");
  cmd->add_option("--data", d.data, "dataset CSV (overrides the config dataset)");
  d.train_opt = cmd->add_option("--split-train", d.train, "train fraction");
  d.val_opt = cmd->add_option("--split-val", d.val, "validation fraction");
  d.test_opt = cmd->add_option("--split-test", d.test, "test fraction");
  d.seed_opt = cmd->add_option("--split-seed", d.split_seed, "split seed");
}

std::optional<ExperimentConfig> maybe_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_experiment_config(path);
}

DatasetSplit load_split(const DataOptions& d, const std::optional<ExperimentConfig>& cfg) {
  SplitFractions fr{d.train, d.val, d.test};
  std::uint64_t seed = d.split_seed;
  if (cfg) {
    if (!d.train_opt->count()) fr.train = cfg->split.train;
    if (!d.val_opt->count()) fr.val = cfg->split.val;
    if (!d.test_opt->count()) fr.test = cfg->split.test;
    if (!d.seed_opt->count()) seed = cfg->split_seed;
  }
  GroupedDataset ds;
  if (!d.data.empty()) {
    ds = io::read_dataset(d.data);
  } else if (cfg) {
    ds = materialize_dataset(*cfg, std::nullopt);
  } else {
    throw ConfigError("no dataset: pass --data or --config");
  }
  return split(ds, fr, seed);
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string config;
  std::string out;
  SyntheticConfig sc;
  std::vector<CLI::Option*> overrides;
};

int cmd_generate(GenerateOptions& o) {
  SyntheticConfig sc;
  if (!o.config.empty()) {
    const std::string text = io::read_text(o.config);
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_object() && j.contains("dataset")) {
      const ExperimentConfig cfg = load_experiment_config(o.config);
      if (!cfg.dataset.synthetic) throw ConfigError("dataset: config has no synthetic block");
      sc = *cfg.dataset.synthetic;
    } else {
      sc = parse_synthetic_config(text);
    }
  }
  // Flags given on the command line win over the config.
  const SyntheticConfig& f = o.sc;
  auto set = [&](const char* name, auto& dst, const auto& src) {
    for (CLI::Option* opt : o.overrides) {
      if (opt->get_name() == name && opt->count()) dst = src;
    }
  };
  set("--n-total", sc.n_total, f.n_total);
  set("--num-classes", sc.num_classes, f.num_classes);
  set("--num-spurious", sc.num_spurious, f.num_spurious);
  set("--proportions", sc.group_proportions, f.group_proportions);
  set("--d-core", sc.d_core, f.d_core);
  set("--d-spur", sc.d_spur, f.d_spur);
  set("--d-noise", sc.d_noise, f.d_noise);
  set("--margin-core", sc.margin_core, f.margin_core);
  set("--margin-spur", sc.margin_spur, f.margin_spur);
  set("--sigma-core", sc.sigma_core, f.sigma_core);
  set("--sigma-spur", sc.sigma_spur, f.sigma_spur);
  set("--sigma-noise", sc.sigma_noise, f.sigma_noise);
  set("--seed", sc.seed, f.seed);
  sc.validate();

  const GroupedDataset ds = generate_synthetic(sc);
  io::write_dataset(o.out, ds, sc);
  std::cout << "wrote " << ds.size() << " rows to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  DataOptions data;
  std::size_t method_index = 0;
  std::string method = "ERM";
  int epochs = 20;
  int batch_size = 32;
  double lr = 0.01;
  double wd = 1e-4;
  std::string optimizer = "sgd";
  std::string schedule = "cosine";
  bool early_stop = false;
  double C = 0.0;
  double eta_q = 0.01;
  std::uint64_t seed = 0;
  std::string out = "run";
  std::vector<CLI::Option*> opts;
};

bool given(const std::vector<CLI::Option*>& opts, const std::string& name) {
  for (CLI::Option* o : opts) {
    if (o->get_name() == name) return o->count() > 0;
  }
  return false;
}

int cmd_train(TrainOptions& o) {
  const auto cfg = maybe_config(o.data.config);
  TrainConfig tc;
  if (cfg) {
    if (o.method_index >= cfg->methods.size()) throw ConfigError("--method-index out of range");
    tc = cfg->methods[o.method_index];
  } else {
    tc.optimizer.lr0 = o.lr;
    tc.epochs = o.epochs;
  }
  if (!cfg || given(o.opts, "--method")) {
    tc.method = method_from_string(o.method);
    if (tc.method == Method::GDRO && !tc.gdro) tc.gdro = GdroConfig{};
    if (tc.method != Method::GDRO) tc.gdro.reset();
  }
  if (given(o.opts, "--epochs")) tc.epochs = o.epochs;
  if (given(o.opts, "--batch-size")) tc.batch_size = o.batch_size;
  if (given(o.opts, "--lr")) tc.optimizer.lr0 = o.lr;
  if (given(o.opts, "--wd")) tc.optimizer.weight_decay = o.wd;
  if (given(o.opts, "--optimizer")) tc.optimizer.kind = optimizer_kind_from_string(o.optimizer);
  if (given(o.opts, "--schedule")) tc.optimizer.schedule = schedule_from_string(o.schedule);
  if (given(o.opts, "--early-stop")) tc.early_stop = o.early_stop;
  if (tc.gdro && given(o.opts, "--C")) tc.gdro->C = o.C;
  if (tc.gdro && given(o.opts, "--eta-q")) tc.gdro->eta_q = o.eta_q;
  if (given(o.opts, "--seed")) tc.seed = o.seed;
  tc.validate();

  const DatasetSplit data = load_split(o.data, cfg);
  std::vector<int> widths{data.train.dim()};
  widths.insert(widths.end(), tc.hidden.begin(), tc.hidden.end());
  widths.push_back(data.train.num_classes);
  const ModelParams init = init_mlp(widths, derive_seed({tc.seed, 1}));
  const TrainResult tr = train(data.train, data.val, init, tc);
  const ModelParams& chosen = tc.early_stop ? tr.best_params : tr.final_params;
  const int epoch = tc.early_stop ? tr.best_epoch : tc.epochs;

  const fs::path out = resolve_output_dir(o.out);
  fs::create_directories(out);
  io::save_checkpoint(out / "checkpoint.json", {chosen, tc.seed, epoch});
  io::write_history(out / "history.csv", tr.history);
  const EvalReport report = evaluate_logits(predict_logits(chosen, data.test.X), data.test,
                                            group_distribution(data.train.n_per_group));
  io::save_eval_report(out / "eval.json", report);
  std::printf("%s epoch %d: test wga %.4f, mean acc %.4f -> %s\n", tc.label().c_str(), epoch, report.wga,
              report.mean_acc, out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct DfrOptions {
  DataOptions data;
  std::string checkpoint;
  std::string target = "class_label";
  std::vector<double> c_grid;
  int repeats = 10;
  bool unbalanced = false;
  std::uint64_t seed = 0;
  std::string out = "dfr.json";
};

int cmd_dfr(DfrOptions& o) {
  const auto cfg = maybe_config(o.data.config);
  DfrConfig dc = cfg ? cfg->dfr : DfrConfig{};
  dc.target = dfr_target_from_string(o.target);
  if (!o.c_grid.empty()) dc.c_grid = o.c_grid;
  dc.repeats = o.repeats;
  dc.balanced = !o.unbalanced;
  dc.seed = o.seed;
  dc.validate();

  const io::Checkpoint ck = io::load_checkpoint(o.checkpoint);
  const DatasetSplit data = load_split(o.data, cfg);
  const ReweightingSet rs = make_reweighting_set(embed(ck.params, data.val.X), data.val, dc.target);
  const DfrResult result = dfr_fit(rs, dc);
  const fs::path out = resolve_output_dir(o.out);
  io::save_dfr_result(out, result, dc.target);

  const Matrix logits = apply_head(result.head, embed(ck.params, data.test.X));
  const GroupWeights dist = group_distribution(data.train.n_per_group);
  const EvalReport report = dc.target == DfrTarget::ClassLabel ? evaluate_logits(logits, data.test, dist)
                                                                : evaluate_spurious_logits(logits, data.test, dist);
  std::printf("chosen c %g, test wga %.4f -> %s\n", result.chosen_c, report.wga, out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string head;
  std::string data;
  std::string train_data;
  std::string out;
};

int cmd_eval(EvalOptions& o) {
  const io::Checkpoint ck = io::load_checkpoint(o.checkpoint);
  const GroupedDataset ds = io::read_dataset(o.data);
  const GroupWeights dist =
      group_distribution(o.train_data.empty() ? ds.n_per_group : io::read_dataset(o.train_data).n_per_group);
  Matrix logits;
  bool spurious = false;
  if (o.head.empty()) {
    logits = predict_logits(ck.params, ds.X);
  } else {
    const std::string text = io::read_text(o.head);
    spurious = nlohmann::json::parse(text).value("target", "class_label") == "spurious_attribute";
    logits = apply_head(io::load_dfr_result(o.head).head, embed(ck.params, ds.X));
  }
  bool renormalized = false;
  const EvalReport report =
      spurious ? evaluate_spurious_logits(logits, ds, dist) : evaluate_logits(logits, ds, dist);
  mean_accuracy_train_weighted(report.per_group_acc, dist, &renormalized);
  if (renormalized) std::cerr << "warning: mean accuracy renormalized over the groups present\n";
  const std::string text = io::eval_report_json(report);
  if (o.out.empty()) {
    std::cout << text;
  } else {
    io::write_text(resolve_output_dir(o.out), text);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct ExperimentOptions {
  std::string config;
  std::string output_dir;
  int workers = 0;
  std::vector<std::uint64_t> seeds;
  bool track_dfr = false;
};

int cmd_experiment(ExperimentOptions& o) {
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.workers > 0) cfg.workers = o.workers;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.track_dfr) cfg.track_dfr = true;
  cfg.validate();

  const ExperimentResult result = run_experiment(cfg);
  if (!result.records.empty()) std::cout << compare_report(result.records);
  std::cout << "results in " << resolve_output_dir(cfg.output_dir).string() << "\n";
  if (!result.complete) {
    std::cerr << "experiment incomplete: " << result.error << "\n";
    return kIncomplete;
  }
  return kOk;
}

struct ReportOptions {
  std::string input;
  std::string summary;
};

int cmd_report(ReportOptions& o) {
  fs::path path = o.input;
  if (fs::is_directory(path)) path /= "records.csv";
  const std::vector<RunRecord> records = parse_records_csv(io::read_text(path));
  if (records.empty()) throw ConfigError(path.string() + ": no records");
  std::cout << compare_report(records);
  if (fs::exists(path.parent_path() / "INCOMPLETE")) std::cout << "note: the experiment did not finish\n";
  if (!o.summary.empty()) io::write_text(o.summary, summary_csv(summarize(records)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-robust training and last-layer retraining on tabular data"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset to CSV");
  g->add_option("-c,--config", gen.config, "synthetic block or experiment config");
  g->add_option("-o,--out", gen.out, "output CSV")->required();
  gen.overrides = {
      g->add_option("--n-total", gen.sc.n_total),        g->add_option("--num-classes", gen.sc.num_classes),
      g->add_option("--num-spurious", gen.sc.num_spurious), g->add_option("--proportions", gen.sc.group_proportions),
      g->add_option("--d-core", gen.sc.d_core),          g->add_option("--d-spur", gen.sc.d_spur),
      g->add_option("--d-noise", gen.sc.d_noise),        g->add_option("--margin-core", gen.sc.margin_core),
      g->add_option("--margin-spur", gen.sc.margin_spur), g->add_option("--sigma-core", gen.sc.sigma_core),
      g->add_option("--sigma-spur", gen.sc.sigma_spur),  g->add_option("--sigma-noise", gen.sc.sigma_noise),
      g->add_option("--seed", gen.sc.seed)};

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "train one model and save its checkpoint");
  add_data_options(t, tr.data);
  t->add_option("--method-index", tr.method_index, "which config method to train");
  tr.opts = {t->add_option("--method", tr.method, "ERM, RWY, RWG or GDRO"),
             t->add_option("--epochs", tr.epochs),
             t->add_option("--batch-size", tr.batch_size),
             t->add_option("--lr", tr.lr),
             t->add_option("--wd", tr.wd),
             t->add_option("--optimizer", tr.optimizer, "sgd or adamw"),
             t->add_option("--schedule", tr.schedule, "cosine, linear or constant"),
             t->add_flag("--early-stop", tr.early_stop),
             t->add_option("--C", tr.C),
             t->add_option("--eta-q", tr.eta_q),
             t->add_option("--seed", tr.seed)};
  t->add_option("-o,--out", tr.out, "output directory");

  DfrOptions df;
  auto* d = app.add_subcommand("dfr", "retrain the last layer of a checkpoint on the validation split");
  add_data_options(d, df.data);
  d->add_option("--checkpoint", df.checkpoint)->required();
  d->add_option("--target", df.target, "class_label or spurious_attribute");
  d->add_option("--c-grid", df.c_grid);
  d->add_option("--repeats", df.repeats);
  d->add_flag("--unbalanced", df.unbalanced, "fit on the whole set instead of balanced subsamples");
  d->add_option("--seed", df.seed);
  d->add_option("-o,--out", df.out);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint (optionally with a retrained head)");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--head", ev.head, "DFR result JSON");
  e->add_option("--data", ev.data, "dataset CSV to evaluate on")->required();
  e->add_option("--train-data", ev.train_data, "training CSV for the mean-accuracy weights");
  e->add_option("-o,--out", ev.out, "write the report here instead of stdout");

  ExperimentOptions ex;
  auto* x = app.add_subcommand("experiment", "run every method, seed and sweep value of a config");
  x->add_option("-c,--config,config", ex.config)->required();
  x->add_option("--output-dir", ex.output_dir);
  x->add_option("--workers", ex.workers);
  x->add_option("--seeds", ex.seeds);
  x->add_flag("--track-dfr", ex.track_dfr);

  ReportOptions rp;
  auto* r = app.add_subcommand("report", "aggregate a records table");
  r->add_option("input", rp.input, "records.csv or an experiment output directory")->required();
  r->add_option("--summary", rp.summary, "also write the summary CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*d) return cmd_dfr(df);
    if (*e) return cmd_eval(ev);
    if (*x) return cmd_experiment(ex);
    if (*r) return cmd_report(rp);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
