#include "sfl/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sfl::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

namespace {

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

double parse_double(std::string_view field, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": bad number '" +
                      std::string(field) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

json layer_to_json(const Layer& l) {
  std::vector<double> w(static_cast<std::size_t>(l.W.size()));
  for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
    for (Eigen::Index c = 0; c < l.W.cols(); ++c) w[r * l.W.cols() + c] = l.W(r, c);
  }
  return {{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"W", w},
          {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}};
}

Layer layer_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("W").get<std::vector<double>>();
  const auto b = j.at("b").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
    throw FormatError("layer arrays do not match declared shape");
  }
  Layer l{Matrix(rows, cols), Vector(rows)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = w[r * cols + c];
    l.b(r) = b[r];
  }
  return l;
}

json synthetic_to_json(const SyntheticConfig& c) {
  return {{"n_total", c.n_total},         {"num_classes", c.num_classes},
          {"num_spurious", c.num_spurious}, {"group_mode", to_string(c.group_mode)},
          {"group_proportions", c.group_proportions},
          {"d_core", c.d_core},           {"d_spur", c.d_spur},
          {"d_noise", c.d_noise},         {"margin_core", c.margin_core},
          {"margin_spur", c.margin_spur}, {"sigma_core", c.sigma_core},
          {"sigma_spur", c.sigma_spur},   {"sigma_noise", c.sigma_noise},
          {"seed", c.seed}};
}

}  // namespace

fs::path meta_path(const fs::path& csv) { return fs::path(csv.string() + ".meta.json"); }

void write_dataset(const fs::path& csv, const GroupedDataset& ds,
                   const std::optional<SyntheticConfig>& origin) {
  std::string text;
  for (int j = 0; j < ds.dim(); ++j) text += "f" + std::to_string(j) + ",";
  text += "y,s,g\n";
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) {
      text += format_double(ds.X(i, j));
      text += ',';
    }
    text += std::to_string(ds.y[i]) + "," + std::to_string(ds.s[i]) + "," + std::to_string(ds.g[i]) + "\n";
  }
  write_text(csv, text);

  json meta = {{"format", "sfl-dataset"},
               {"version", 1},
               {"n", ds.size()},
               {"dim", ds.dim()},
               {"num_classes", ds.num_classes},
               {"num_spurious", ds.num_spurious},
               {"group_mode", to_string(ds.group_mode)},
               {"n_per_group", ds.n_per_group}};
  if (origin) meta["synthetic"] = synthetic_to_json(*origin);
  write_text(meta_path(csv), meta.dump(2) + "\n");
}

GroupedDataset read_dataset(const fs::path& csv) {
  const std::string text = read_text(csv);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 3 || header[header.size() - 3] != "y" || header[header.size() - 2] != "s" ||
      header.back() != "g") {
    throw FormatError(csv.string() + ": header must end with y,s,g");
  }
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw FormatError(csv.string() + ": expected column f" + std::to_string(j));
    }
  }
  std::vector<double> values;
  Labels y, s, g;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": wrong field count");
    }
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_double(fields[j], csv, line_no));
    y.push_back(static_cast<int>(parse_double(fields[d], csv, line_no)));
    s.push_back(static_cast<int>(parse_double(fields[d + 1], csv, line_no)));
    g.push_back(static_cast<int>(parse_double(fields[d + 2], csv, line_no)));
  }
  Matrix X(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) X(i, j) = values[i * d + j];
  }

  int K = 1, S = 1;
  GroupMode mode = GroupMode::LabelCrossSpurious;
  if (fs::exists(meta_path(csv))) {
    const json meta = read_json(meta_path(csv));
    K = meta.at("num_classes").get<int>();
    S = meta.at("num_spurious").get<int>();
    mode = group_mode_from_string(meta.at("group_mode").get<std::string>());
  } else {
    for (int v : y) K = std::max(K, v + 1);
    for (int v : s) S = std::max(S, v + 1);
    bool crossed = true;
    for (std::size_t i = 0; i < y.size(); ++i) crossed = crossed && g[i] == y[i] * S + s[i];
    mode = crossed ? GroupMode::LabelCrossSpurious : GroupMode::SpuriousOnly;
  }
  GroupedDataset ds = GroupedDataset::make(std::move(X), std::move(y), std::move(s), mode, K, S);
  if (ds.g != g) throw FormatError(csv.string() + ": g column disagrees with (y, s)");
  return ds;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  json layers = json::array();
  for (const Layer& l : ck.params.layers) layers.push_back(layer_to_json(l));
  const json j = {{"format", "sfl-checkpoint"}, {"version", 1}, {"seed", ck.seed},
                  {"epoch", ck.epoch},          {"layers", layers}};
  write_text(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  const json j = read_json(path);
  try {
    if (j.at("format") != "sfl-checkpoint") throw FormatError(path.string() + ": not a checkpoint");
    if (j.at("version").get<int>() != 1) throw FormatError(path.string() + ": unsupported version");
    Checkpoint ck;
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.epoch = j.at("epoch").get<int>();
    for (const json& l : j.at("layers")) ck.params.layers.push_back(layer_from_json(l));
    ck.params.validate();
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_history(const fs::path& path, const std::vector<EvalRecord>& history) {
  std::string text = "epoch,split,group,accuracy,loss\n";
  for (const EvalRecord& r : history) {
    const std::string ep = std::to_string(r.epoch);
    text += ep + ",train,all,," + format_double(r.train_loss) + "\n";
    for (const auto& [group, acc] : r.val_group_acc) {
      const auto it = r.val_group_loss.find(group);
      text += ep + ",val," + std::to_string(group) + "," + format_double(acc) + "," +
              (it == r.val_group_loss.end() ? "" : format_double(it->second)) + "\n";
    }
    text += ep + ",val,worst," + format_double(r.val_wga) + ",\n";
    text += ep + ",val,mean," + format_double(r.val_mean_acc) + ",\n";
  }
  write_text(path, text);
}

void save_dfr_result(const fs::path& path, const DfrResult& result, DfrTarget target) {
  json table = json::array();
  for (const TuneRow& r : result.per_c_val_wga) {
    table.push_back({{"c", r.c}, {"val_wga", r.val_wga}, {"sparsity", r.sparsity}});
  }
  const json j = {{"format", "sfl-dfr"},          {"version", 1},
                  {"target", to_string(target)},   {"chosen_c", result.chosen_c},
                  {"repeats_used", result.repeats_used}, {"head", layer_to_json(result.head)},
                  {"tuning", table}};
  write_text(path, j.dump(2) + "\n");
}

DfrResult load_dfr_result(const fs::path& path) {
  const json j = read_json(path);
  try {
    if (j.at("format") != "sfl-dfr") throw FormatError(path.string() + ": not a DFR result");
    DfrResult r;
    r.chosen_c = j.at("chosen_c").get<double>();
    r.repeats_used = j.at("repeats_used").get<int>();
    r.head = layer_from_json(j.at("head"));
    for (const json& row : j.at("tuning")) {
      r.per_c_val_wga.push_back({row.at("c").get<double>(), row.at("val_wga").get<double>(),
                                 row.at("sparsity").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_tuning_table(const fs::path& path, const std::vector<TuneRow>& rows) {
  std::string text = "c,val_wga,sparsity\n";
  for (const TuneRow& r : rows) {
    text += format_double(r.c) + "," + format_double(r.val_wga) + "," + format_double(r.sparsity) + "\n";
  }
  write_text(path, text);
}

std::string eval_report_json(const EvalReport& report) {
  json per_group = json::object();
  for (const auto& [g, acc] : report.per_group_acc) per_group[std::to_string(g)] = acc;
  json j = {{"per_group_acc", per_group},
            {"wga", report.wga},
            {"mean_acc", report.mean_acc},
            {"auc", report.auc ? json(*report.auc) : json(nullptr)},
            {"worst_group_auc", report.worst_group_auc ? json(*report.worst_group_auc) : json(nullptr)},
            {"n_per_group", report.n_per_group}};
  return j.dump(2) + "\n";
}

void save_eval_report(const fs::path& path, const EvalReport& report) {
  write_text(path, eval_report_json(report));
}

}  // namespace sfl::io
