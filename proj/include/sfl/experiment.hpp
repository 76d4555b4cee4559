#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/dfr.hpp"
#include "sfl/train.hpp"

namespace sfl {

enum class SweepAxis { None, WeightDecay, EtaQ, C, MarginRatio };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);

struct SweepSpec {
  SweepAxis axis = SweepAxis::None;
  std::vector<double> values;

  bool operator==(const SweepSpec&) const = default;
};

struct DatasetSource {
  std::optional<SyntheticConfig> synthetic;
  std::string path;  // used when `synthetic` is empty

  bool operator==(const DatasetSource&) const = default;
};

struct ExperimentConfig {
  DatasetSource dataset;
  SplitFractions split;
  std::uint64_t split_seed = 0;
  std::vector<TrainConfig> methods;
  DfrConfig dfr;
  SweepSpec sweep;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "results";
  int workers = 1;
  // Run DFR on every evaluated checkpoint and write a training-length table.
  bool track_dfr = false;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses the JSON experiment config; errors name the offending field path.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string serialize_experiment_config(const ExperimentConfig& cfg);

/// Parses / serializes only a `synthetic` block (used by `generate`).
SyntheticConfig parse_synthetic_config(const std::string& json_text);

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string sweep_axis;
  double sweep_value = 0.0;
  double base_wga = 0.0;
  double base_mean_acc = 0.0;
  double dfr_wga = 0.0;
  double dfr_s_wga = 0.0;
  int best_epoch = 0;
  double chosen_c = 0.0;
  double runtime_s = 0.0;
};

/// One checkpoint of the training-length table.
struct TrainLengthRow {
  int epoch = 0;
  double base_wga = 0.0;
  double dfr_wga = 0.0;
  double dfr_s_wga = 0.0;
};

struct RunOutput {
  RunRecord record;
  std::vector<TrainLengthRow> train_length;
};

/// Seed of run (method, sweep point, repetition): derive_seed of the four indices.
std::uint64_t run_seed(std::uint64_t experiment_seed, std::size_t method_index,
                       std::size_t sweep_index, std::size_t repetition);

/// Builds the dataset of a sweep point (the margin-ratio axis regenerates it).
GroupedDataset materialize_dataset(const ExperimentConfig& cfg, std::optional<double> margin_ratio);

/// The method config with the sweep value applied.
TrainConfig apply_sweep(const TrainConfig& method, SweepAxis axis, double value);

/// Full protocol for one (method, seed, sweep value) run. Writes per-run files
/// under `run_dir` when it is non-empty.
RunOutput execute_run(const DatasetSplit& data, const TrainConfig& method, std::uint64_t seed,
                      const DfrConfig& dfr, bool track_dfr, const std::filesystem::path& run_dir);

struct ExperimentResult {
  std::vector<RunRecord> records;
  bool complete = true;
  std::string error;
};

/// Runs every (method, seed, sweep value) and writes records.csv, runtime.csv,
/// summary.csv and results.json into cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const std::filesystem::path& config_path);

/// Resolves `dir` against $SFL_OUTPUT_ROOT when it is relative and the variable is set.
std::filesystem::path resolve_output_dir(const std::string& dir);

/// Record table: method,seed,sweep_axis,sweep_value,base_wga,base_mean_acc,dfr_wga,dfr_s_wga,best_epoch,chosen_c
std::string records_csv(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_records_csv(const std::string& text);

struct SummaryRow {
  std::string method;
  std::string sweep_axis;
  double sweep_value = 0.0;
  int n = 0;
  double base_wga_mean = 0.0, base_wga_std = 0.0;
  double base_mean_acc_mean = 0.0, base_mean_acc_std = 0.0;
  double dfr_wga_mean = 0.0, dfr_wga_std = 0.0;
  double dfr_s_wga_mean = 0.0, dfr_s_wga_std = 0.0;
  double gap_mean = 0.0;  // dfr_wga - base_wga
  bool single_seed = false;
};

/// Mean and sample standard deviation (n - 1 divisor; 0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Aggregates records per (method, sweep value), in order of first appearance.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records);
std::string summary_csv(const std::vector<SummaryRow>& rows);

/// Human-readable comparison: base WGA and DFR WGA as mean ± std per method,
/// plus the DFR gain. Single-seed rows are flagged with '*'.
std::string compare_report(const std::vector<RunRecord>& records);

}  // namespace sfl
