#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "packedflow/data.hpp"
#include "packedflow/metrics.hpp"
#include "packedflow/packed_net.hpp"
#include "packedflow/training.hpp"

namespace packedflow {

struct MachineInfo {
  std::string cpu;
  unsigned hardware_threads = 0;
  unsigned threads_used = 1;
};

MachineInfo describe_machine();

struct TimedRun {
  double train_seconds = 0.0;
  TrainResult result;
  MachineInfo machine;
};

// Wall-clock time of train() alone; data loading and scaling happen before the
// clock starts. Early stopping must be off so compared runs do equal epochs.
TimedRun time_training(const PackedSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                       const ScalerPair& scaler);

// One model of a benchmark: architecture plus its optimizer settings.
struct BenchModel {
  std::string name;
  PackedSpec spec;
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
};

struct BenchRow {
  std::string name;
  PackedSpec spec;
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  std::size_t param_count = 0;
  std::size_t hidden_weight_count = 0;
  double train_seconds = 0.0;
  double final_train_loss = 0.0;
  std::vector<double> epoch_losses;
  // One report per evaluated split, in BenchReport::splits order.
  std::vector<EvalReport> reports;
  std::optional<std::string> error;
};

struct BenchReport {
  std::vector<Split> splits;
  std::vector<BenchRow> rows;
  MachineInfo machine;
};

// Trains each model once (sequentially) and evaluates it on every split.
// A failing row records its error and the remaining rows still run.
BenchReport run_benchmark(std::span<const BenchModel> models, const TrainConfig& cfg, const Dataset& train_data,
                          std::span<const Dataset> eval_splits);

// Lossless JSON form of a report; the tables below are pure views of it.
std::string bench_raw_json(const BenchReport& report);
BenchReport bench_from_raw_json(std::string_view json);

// Table-3 shaped report for the split at position split_index.
std::string bench_csv(const BenchReport& report, std::size_t split_index);
std::string bench_text_table(const BenchReport& report, std::size_t split_index);

std::string format_layers(std::span<const std::size_t> widths);

}  // namespace packedflow
