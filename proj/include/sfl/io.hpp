#pragma once

// File formats shared by the CLI and the experiment runner. All formats are
// documented in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/dfr.hpp"
#include "sfl/metrics.hpp"
#include "sfl/model.hpp"
#include "sfl/train.hpp"

namespace sfl::io {

namespace fs = std::filesystem;

/// Raised on unreadable or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);

// Dataset: CSV with header f0..f{d-1},y,s,g and a JSON sidecar <path>.meta.json.
void write_dataset(const fs::path& csv, const GroupedDataset& ds,
                   const std::optional<SyntheticConfig>& origin = std::nullopt);
GroupedDataset read_dataset(const fs::path& csv);
fs::path meta_path(const fs::path& csv);

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  int epoch = 0;
};

void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

/// Columns: epoch,split,group,accuracy,loss.
void write_history(const fs::path& path, const std::vector<EvalRecord>& history);

void save_dfr_result(const fs::path& path, const DfrResult& result, DfrTarget target);
DfrResult load_dfr_result(const fs::path& path);
/// Columns: c,val_wga,sparsity.
void write_tuning_table(const fs::path& path, const std::vector<TuneRow>& rows);

void save_eval_report(const fs::path& path, const EvalReport& report);
std::string eval_report_json(const EvalReport& report);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace sfl::io
