#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "packedflow/data.hpp"
#include "packedflow/packed_net.hpp"

namespace packedflow {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  std::size_t max_epochs = 200;
  std::size_t batch_points = 4096;
  std::uint64_t seed = 0;
  bool early_stop_enabled = false;
  double early_stop_threshold = 0.01;
  std::size_t early_stop_window = 5;

  // Throws ConfigError.
  void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  Params first_moment;
  Params second_moment;
  std::uint64_t step_count = 0;

  static AdamState zeros_like(std::span<const LayerPlan> plans);
};

// One Adam update with bias correction. Weight decay is coupled L2 on the
// weights (biases exempt). Throws Error on a non-finite gradient.
void adam_step(Params& params, const Grads& grads, AdamState& state, double learning_rate, double weight_decay);

// True iff each of the last `window` relative changes of the loss is below
// threshold. A zero previous loss counts as no change.
bool early_stop(std::span<const double> losses, double threshold = 0.01, std::size_t window = 5);

struct EpochRecord {
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;

  std::vector<double> train_losses() const;
};

struct TrainResult {
  Params params;
  TrainHistory history;
};

// Fits a packed network on the scaled points of train_data. When val_data is
// given, its scaled-target MSE (eval mode) is logged every epoch.
TrainResult train(const PackedSpec& spec, const Dataset& train_data, const Dataset* val_data, const ScalerPair& scaler,
                  const TrainConfig& cfg);

// Scaled-target MSE of the ensemble mean, eval mode, pooled over all points.
double scaled_mse(const Params& params, const Architecture& arch, const Dataset& data, const ScalerPair& scaler);

// Ensemble-mean predictions for one simulation in physical units.
Matrix predict_simulation(const Params& params, const Architecture& arch, const ScalerPair& scaler,
                          const Simulation& sim);

void write_history_csv(const std::string& path, const TrainHistory& history);

struct GridPoint {
  bool dropout = false;
  std::size_t alpha = 1;
  std::size_t gamma = 1;
  double learning_rate = 1e-3;
};

struct CVRow {
  GridPoint point;
  double validation_loss = 0.0;
  std::vector<double> fold_losses;
};

struct CVResult {
  std::vector<CVRow> rows;
};

struct CVOptions {
  std::size_t folds = 4;
  // Parallel (row, fold) trainings. Results do not depend on this.
  std::size_t jobs = 1;
};

// Each grid point is trained on every fold (scaler refit per fold) and scored
// by the mean held-out scaled MSE. base supplies M, widths and in/out sizes;
// alpha, gamma and dropout come from the grid.
CVResult cross_validate(const Dataset& dataset, std::span<const GridPoint> grid, const PackedSpec& base,
                        const TrainConfig& cfg, const CVOptions& options = {});

// "dropout,alpha,gamma,learning_rate,validation_loss" table.
std::string cv_results_csv(const CVResult& result);
// One line per (row, fold) with the individual held-out losses.
std::string cv_folds_csv(const CVResult& result);

}  // namespace packedflow
