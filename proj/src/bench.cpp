#include "packedflow/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "packedflow/error.hpp"
#include "packedflow/util.hpp"

namespace packedflow {

MachineInfo describe_machine() {
  MachineInfo info;
  info.hardware_threads = std::thread::hardware_concurrency();
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) info.cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  if (info.cpu.empty()) info.cpu = "unknown";
  return info;
}

TimedRun time_training(const PackedSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                       const ScalerPair& scaler) {
  if (cfg.early_stop_enabled) throw ConfigError("timed training requires early stopping to be disabled");
  if (cfg.max_epochs == 0) throw ConfigError("timed training requires max_epochs >= 1");
  TimedRun run;
  run.machine = describe_machine();
  const auto start = std::chrono::steady_clock::now();
  run.result = train(spec, train_data, nullptr, scaler, cfg);
  run.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

std::string format_layers(std::span<const std::size_t> widths) {
  std::string out = "(";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(widths[i]);
  }
  return out + ")";
}

BenchReport run_benchmark(std::span<const BenchModel> models, const TrainConfig& cfg, const Dataset& train_data,
                          std::span<const Dataset> eval_splits) {
  if (models.empty()) throw ConfigError("benchmark needs at least one model");
  BenchReport report;
  report.machine = describe_machine();
  for (const Dataset& d : eval_splits) report.splits.push_back(d.split);
  const ScalerPair scaler = fit_scaler(train_data);

  for (const BenchModel& model : models) {
    BenchRow row;
    row.name = model.name;
    row.spec = model.spec;
    row.learning_rate = model.learning_rate;
    row.weight_decay = model.weight_decay;
    try {
      const auto plans = plan_layers(model.spec);
      row.param_count = param_count(plans);
      row.hidden_weight_count = hidden_weight_count(plans);
      TrainConfig run_cfg = cfg;
      run_cfg.learning_rate = model.learning_rate;
      run_cfg.weight_decay = model.weight_decay;
      run_cfg.early_stop_enabled = false;
      TimedRun run = time_training(model.spec, run_cfg, train_data, scaler);
      row.train_seconds = run.train_seconds;
      row.epoch_losses = run.result.history.train_losses();
      row.final_train_loss = row.epoch_losses.empty() ? 0.0 : row.epoch_losses.back();
      const Architecture arch = make_architecture(model.spec);
      for (const Dataset& split : eval_splits) row.reports.push_back(evaluate(run.result.params, arch, scaler, split).report);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.reports.clear();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

nlohmann::ordered_json report_to_json(const EvalReport& r) { return nlohmann::ordered_json::parse(report_json(r)); }

}  // namespace

std::string bench_raw_json(const BenchReport& report) {
  nlohmann::ordered_json j;
  j["machine"] = {{"cpu", report.machine.cpu},
                  {"hardware_threads", report.machine.hardware_threads},
                  {"threads_used", report.machine.threads_used}};
  j["splits"] = nlohmann::ordered_json::array();
  for (Split s : report.splits) j["splits"].push_back(to_string(s));
  j["rows"] = nlohmann::ordered_json::array();
  for (const BenchRow& row : report.rows) {
    nlohmann::ordered_json r;
    r["name"] = row.name;
    r["num_estimators"] = row.spec.num_estimators;
    r["alpha"] = row.spec.alpha;
    r["gamma"] = row.spec.gamma;
    r["hidden_widths"] = row.spec.hidden_widths;
    r["dropout"] = row.spec.dropout_enabled;
    r["learning_rate"] = row.learning_rate;
    r["weight_decay"] = row.weight_decay;
    r["param_count"] = row.param_count;
    r["hidden_weight_count"] = row.hidden_weight_count;
    r["train_seconds"] = row.train_seconds;
    r["final_train_loss"] = row.final_train_loss;
    r["epoch_losses"] = row.epoch_losses;
    r["reports"] = nlohmann::ordered_json::array();
    for (const EvalReport& e : row.reports) r["reports"].push_back(report_to_json(e));
    r["error"] = row.error ? nlohmann::ordered_json(*row.error) : nlohmann::ordered_json(nullptr);
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

BenchReport bench_from_raw_json(std::string_view text) {
  BenchReport report;
  try {
    const auto j = nlohmann::json::parse(text);
    report.machine.cpu = j.at("machine").at("cpu").get<std::string>();
    report.machine.hardware_threads = j.at("machine").at("hardware_threads").get<unsigned>();
    report.machine.threads_used = j.at("machine").at("threads_used").get<unsigned>();
    for (const auto& s : j.at("splits")) report.splits.push_back(split_from_string(s.get<std::string>()));
    for (const auto& r : j.at("rows")) {
      BenchRow row;
      row.name = r.at("name").get<std::string>();
      row.spec.num_estimators = r.at("num_estimators").get<std::size_t>();
      row.spec.alpha = r.at("alpha").get<std::size_t>();
      row.spec.gamma = r.at("gamma").get<std::size_t>();
      row.spec.hidden_widths = r.at("hidden_widths").get<std::vector<std::size_t>>();
      row.spec.dropout_enabled = r.at("dropout").get<bool>();
      row.learning_rate = r.at("learning_rate").get<double>();
      row.weight_decay = r.at("weight_decay").get<double>();
      row.param_count = r.at("param_count").get<std::size_t>();
      row.hidden_weight_count = r.at("hidden_weight_count").get<std::size_t>();
      row.train_seconds = r.at("train_seconds").get<double>();
      row.final_train_loss = r.at("final_train_loss").get<double>();
      row.epoch_losses = r.at("epoch_losses").get<std::vector<double>>();
      for (const auto& e : r.at("reports")) row.reports.push_back(report_from_json(e.dump()));
      if (!r.at("error").is_null()) row.error = r.at("error").get<std::string>();
      report.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("benchmark log: ") + e.what());
  }
  return report;
}

namespace {

constexpr const char* kHyperColumns[] = {"model", "layers", "M", "alpha", "gamma", "dropout", "lr", "weight_decay"};
constexpr std::size_t kPhysicsFirst = 5;  // metric_names() index of mean relative drag

std::vector<std::vector<std::string>> table_cells(const BenchReport& report, std::size_t split_index) {
  if (split_index >= report.splits.size()) throw ConfigError("benchmark split index out of range");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header(std::begin(kHyperColumns), std::end(kHyperColumns));
  const auto& names = metric_names();
  for (std::size_t k = kPhysicsFirst; k < names.size(); ++k) header.emplace_back(names[k].display);
  for (std::size_t k = 0; k < kPhysicsFirst; ++k) header.push_back("MSE " + std::string(names[k].display));
  header.insert(header.end(), {"param_count", "train_seconds", "final_train_loss", "error"});
  rows.push_back(std::move(header));

  for (const BenchRow& row : report.rows) {
    std::vector<std::string> cells = {row.name,
                                      format_layers(row.spec.hidden_widths),
                                      std::to_string(row.spec.num_estimators),
                                      std::to_string(row.spec.alpha),
                                      std::to_string(row.spec.gamma),
                                      row.spec.dropout_enabled ? "True" : "False",
                                      format_double(row.learning_rate),
                                      row.weight_decay == 0.0 ? "False" : format_double(row.weight_decay)};
    if (row.error) {
      for (std::size_t k = 0; k < names.size(); ++k) cells.emplace_back();
      cells.insert(cells.end(), {std::to_string(row.param_count), "", "", *row.error});
    } else {
      const auto values = metric_values(row.reports.at(split_index));
      auto cell = [](double v) { return std::isnan(v) ? std::string("undefined") : format_double(v); };
      for (std::size_t k = kPhysicsFirst; k < names.size(); ++k) cells.push_back(cell(values[k]));
      for (std::size_t k = 0; k < kPhysicsFirst; ++k) cells.push_back(cell(values[k]));
      cells.insert(cells.end(), {std::to_string(row.param_count), format_double(row.train_seconds),
                                 format_double(row.final_train_loss), ""});
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string bench_csv(const BenchReport& report, std::size_t split_index) {
  std::string out;
  for (const auto& row : table_cells(report, split_index)) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += csv_escape(row[c]);
    }
    out += '\n';
  }
  return out;
}

std::string bench_text_table(const BenchReport& report, std::size_t split_index) {
  const auto rows = table_cells(report, split_index);
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  std::ostringstream os;
  os << "split: " << to_string(report.splits[split_index]) << "\n";
  os << "machine: " << report.machine.cpu << " (" << report.machine.hardware_threads << " hardware threads, "
     << report.machine.threads_used << " used)\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      os << (c ? " | " : "") << std::left << std::setw(static_cast<int>(width[c])) << rows[r][c];
    }
    os << "\n";
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) os << (c ? "-+-" : "") << std::string(width[c], '-');
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace packedflow
