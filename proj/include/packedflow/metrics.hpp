#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "packedflow/data.hpp"
#include "packedflow/packed_net.hpp"

namespace packedflow {

// Per-channel MSE in kTargetColumns order.
std::array<double, 4> mse_per_channel(const Matrix& pred, const Matrix& truth);

// Surface points ordered into a closed polygon by angle around their centroid.
struct SurfacePolyline {
  std::vector<std::size_t> indices;
  // Half the sum of the two polygon edges incident to each point.
  std::vector<double> segment_lengths;

  double perimeter() const;
};

SurfacePolyline order_surface(const Simulation& sim);

// Pressure-only force per unit span and density, normalised by half the
// squared inlet speed.
struct ForceCoefficients {
  double drag = 0.0;
  double lift = 0.0;
};

// Force per unit density, -sum_i p_i n_i l_i, over the polyline. pressure has
// one entry per point of sim (off-surface entries are ignored).
std::array<double, 2> pressure_force(const Simulation& sim, const SurfacePolyline& surface,
                                     std::span<const double> pressure);
ForceCoefficients force_coefficients(const Simulation& sim, const SurfacePolyline& surface,
                                     std::span<const double> pressure);
ForceCoefficients force_coefficients(const Simulation& sim, std::span<const double> pressure);

// Average (fractional) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);
double spearman(std::span<const double> xs, std::span<const double> ys);

double mean_relative_error(std::span<const double> pred, std::span<const double> truth,
                           std::span<const std::string> names = {});

struct EvalReport {
  double mse_x_velocity = 0.0;
  double mse_y_velocity = 0.0;
  double mse_pressure = 0.0;
  double mse_surface_pressure = 0.0;
  double mse_turbulent_viscosity = 0.0;
  double mean_relative_drag = 0.0;
  double mean_relative_lift = 0.0;
  // Empty when undefined (fewer than two simulations or constant inputs).
  std::optional<double> spearman_drag;
  std::optional<double> spearman_lift;
};

struct SimulationCoefficients {
  std::string sim;
  ForceCoefficients pred;
  ForceCoefficients truth;
};

struct Evaluation {
  EvalReport report;
  std::vector<SimulationCoefficients> per_simulation;
};

struct MetricName {
  std::string_view key;      // JSON key
  std::string_view display;  // benchmark-table label
};

// The nine reported metrics, in report order.
const std::array<MetricName, 9>& metric_names();
// Values in metric_names() order; undefined Spearman values are NaN.
std::array<double, 9> metric_values(const EvalReport& report);

// Metrics from predictions already in physical units, one matrix per
// simulation of dataset.
Evaluation evaluate_predictions(const Dataset& dataset, std::span<const Matrix> predictions);
Evaluation evaluate(const Params& params, const Architecture& arch, const ScalerPair& scaler, const Dataset& dataset);

std::string report_json(const EvalReport& report);
EvalReport report_from_json(std::string_view json);
// sim,drag_pred,drag_true,lift_pred,lift_true
std::string coefficients_csv(std::span<const SimulationCoefficients> rows);

}  // namespace packedflow
