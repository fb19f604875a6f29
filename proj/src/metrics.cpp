#include "packedflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "packedflow/error.hpp"
#include "packedflow/training.hpp"
#include "packedflow/util.hpp"

namespace packedflow {

std::array<double, 4> mse_per_channel(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || pred.cols() != kTargetColumns.size())
    throw ShapeError(std::nullopt, "mse_per_channel needs two N x 4 arrays of equal shape");
  if (pred.rows() == 0) throw MetricError("mse_per_channel on zero points");
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      const double r = pred(i, c) - truth(i, c);
      out[c] += r * r;
    }
  for (double& v : out) v /= static_cast<double>(pred.rows());
  return out;
}

double SurfacePolyline::perimeter() const {
  return std::accumulate(segment_lengths.begin(), segment_lengths.end(), 0.0);
}

SurfacePolyline order_surface(const Simulation& sim) {
  SurfacePolyline out;
  out.indices = sim.surface_indices();
  const std::size_t n = out.indices.size();
  if (n < 3)
    throw MetricError("simulation '" + sim.name + "' has " + std::to_string(n) + " surface points, need >= 3");

  double cx = 0.0, cy = 0.0;
  for (std::size_t i : out.indices) {
    cx += sim.points(i, feature::x);
    cy += sim.points(i, feature::y);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);

  struct Key {
    double angle, radius;
    std::size_t index;
  };
  std::vector<Key> keys;
  keys.reserve(n);
  for (std::size_t i : out.indices) {
    const double dx = sim.points(i, feature::x) - cx;
    const double dy = sim.points(i, feature::y) - cy;
    keys.push_back({std::atan2(dy, dx), std::hypot(dx, dy), i});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.angle != b.angle) return a.angle < b.angle;
    if (a.radius != b.radius) return a.radius < b.radius;
    return a.index < b.index;
  });

  std::vector<double> edge(n);  // edge[k] joins point k and k+1 (cyclic)
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = keys[k].index;
    const std::size_t b = keys[(k + 1) % n].index;
    edge[k] = std::hypot(sim.points(b, feature::x) - sim.points(a, feature::x),
                         sim.points(b, feature::y) - sim.points(a, feature::y));
  }
  out.segment_lengths.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.indices[k] = keys[k].index;
    out.segment_lengths[k] = 0.5 * (edge[(k + n - 1) % n] + edge[k]);
    if (!(out.segment_lengths[k] > 0.0))
      throw MetricError("simulation '" + sim.name + "' has coincident surface points");
  }
  return out;
}

std::array<double, 2> pressure_force(const Simulation& sim, const SurfacePolyline& surface,
                                     std::span<const double> pressure) {
  if (pressure.size() != sim.size())
    throw ShapeError(std::nullopt, "pressure must have one entry per simulation point");
  double fx = 0.0, fy = 0.0;
  for (std::size_t k = 0; k < surface.indices.size(); ++k) {
    const std::size_t i = surface.indices[k];
    const double w = pressure[i] * surface.segment_lengths[k];
    fx -= w * sim.points(i, feature::nx);
    fy -= w * sim.points(i, feature::ny);
  }
  return {fx, fy};
}

ForceCoefficients force_coefficients(const Simulation& sim, const SurfacePolyline& surface,
                                     std::span<const double> pressure) {
  if (surface.indices.empty()) throw MetricError("simulation '" + sim.name + "' has no surface");
  const std::size_t i0 = surface.indices.front();
  const double ux = sim.points(i0, feature::inlet_vx);
  const double uy = sim.points(i0, feature::inlet_vy);
  const double q = 0.5 * (ux * ux + uy * uy);
  if (!(q > 0.0)) throw MetricError("simulation '" + sim.name + "' has zero inlet speed");
  const auto f = pressure_force(sim, surface, pressure);
  return {f[0] / q, f[1] / q};
}

ForceCoefficients force_coefficients(const Simulation& sim, std::span<const double> pressure) {
  return force_coefficients(sim, order_surface(sim), pressure);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 share the mean of 1-based ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw MetricError("spearman needs equal-length inputs");
  if (xs.size() < 2) throw MetricError("spearman needs at least two samples");
  for (double v : xs)
    if (!std::isfinite(v)) throw MetricError("spearman input is not finite");
  for (double v : ys)
    if (!std::isfinite(v)) throw MetricError("spearman input is not finite");

  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  // Average ranks of n samples always have mean (n+1)/2.
  const double mean = 0.5 * static_cast<double>(xs.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("spearman is undefined for a constant input");
  const double rho = sxy / std::sqrt(sxx * syy);
  return std::clamp(rho, -1.0, 1.0);
}

double mean_relative_error(std::span<const double> pred, std::span<const double> truth,
                           std::span<const std::string> names) {
  if (pred.size() != truth.size()) throw MetricError("mean_relative_error needs equal-length inputs");
  if (pred.empty()) throw MetricError("mean_relative_error on zero samples");
  double sum = 0.0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (truth[s] == 0.0) {
      const std::string who = s < names.size() ? "'" + names[s] + "'" : "#" + std::to_string(s);
      throw MetricError("relative error undefined: true value is zero for simulation " + who);
    }
    sum += std::abs(pred[s] - truth[s]) / std::abs(truth[s]);
  }
  return sum / static_cast<double>(truth.size());
}

const std::array<MetricName, 9>& metric_names() {
  static const std::array<MetricName, 9> names = {{
      {"mse_x_velocity", "x-velocity"},
      {"mse_y_velocity", "y-velocity"},
      {"mse_pressure", "pressure"},
      {"mse_surface_pressure", "surface pressure"},
      {"mse_turbulent_viscosity", "turbulent viscosity"},
      {"mean_relative_drag", "mean relative drag"},
      {"mean_relative_lift", "mean relative lift"},
      {"spearman_drag", "Spearman's correlation for drag"},
      {"spearman_lift", "Spearman's correlation for lift"},
  }};
  return names;
}

std::array<double, 9> metric_values(const EvalReport& r) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {r.mse_x_velocity,       r.mse_y_velocity,     r.mse_pressure,
          r.mse_surface_pressure, r.mse_turbulent_viscosity, r.mean_relative_drag,
          r.mean_relative_lift,   r.spearman_drag.value_or(nan), r.spearman_lift.value_or(nan)};
}

namespace {

std::optional<double> spearman_or_undefined(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() < 2) return std::nullopt;
  try {
    return spearman(pred, truth);
  } catch (const MetricError&) {
    return std::nullopt;
  }
}

}  // namespace

Evaluation evaluate_predictions(const Dataset& dataset, std::span<const Matrix> predictions) {
  if (predictions.size() != dataset.size())
    throw ShapeError(std::nullopt, "need one prediction array per simulation");
  if (dataset.size() == 0) throw MetricError("cannot evaluate an empty dataset");

  Evaluation out;
  std::array<double, 4> sse{};
  double surface_sse = 0.0;
  std::size_t points = 0, surface_points = 0;
  std::vector<double> drag_pred, drag_true, lift_pred, lift_true;
  std::vector<std::string> names;

  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const Simulation& sim = dataset.simulations[s];
    const Matrix& pred = predictions[s];
    const auto mse = mse_per_channel(pred, sim.targets);
    const double n = static_cast<double>(sim.size());
    for (std::size_t c = 0; c < 4; ++c) sse[c] += mse[c] * n;
    points += sim.size();

    std::vector<double> p_pred(sim.size()), p_true(sim.size());
    for (std::size_t i = 0; i < sim.size(); ++i) {
      p_pred[i] = pred(i, target::pressure);
      p_true[i] = sim.targets(i, target::pressure);
      if (sim.is_surface(i)) {
        const double r = p_pred[i] - p_true[i];
        surface_sse += r * r;
        ++surface_points;
      }
    }
    const SurfacePolyline surface = order_surface(sim);
    SimulationCoefficients row{sim.name, force_coefficients(sim, surface, p_pred),
                               force_coefficients(sim, surface, p_true)};
    drag_pred.push_back(row.pred.drag);
    drag_true.push_back(row.truth.drag);
    lift_pred.push_back(row.pred.lift);
    lift_true.push_back(row.truth.lift);
    names.push_back(sim.name);
    out.per_simulation.push_back(std::move(row));
  }

  EvalReport& r = out.report;
  const double np = static_cast<double>(points);
  r.mse_x_velocity = sse[target::vx] / np;
  r.mse_y_velocity = sse[target::vy] / np;
  r.mse_pressure = sse[target::pressure] / np;
  r.mse_turbulent_viscosity = sse[target::nut] / np;
  r.mse_surface_pressure = surface_sse / static_cast<double>(surface_points);
  r.mean_relative_drag = mean_relative_error(drag_pred, drag_true, names);
  r.mean_relative_lift = mean_relative_error(lift_pred, lift_true, names);
  r.spearman_drag = spearman_or_undefined(drag_pred, drag_true);
  r.spearman_lift = spearman_or_undefined(lift_pred, lift_true);
  return out;
}

Evaluation evaluate(const Params& params, const Architecture& arch, const ScalerPair& scaler, const Dataset& dataset) {
  std::vector<Matrix> predictions;
  predictions.reserve(dataset.size());
  for (const Simulation& sim : dataset.simulations) predictions.push_back(predict_simulation(params, arch, scaler, sim));
  return evaluate_predictions(dataset, predictions);
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  const auto values = metric_values(report);
  const auto& names = metric_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string key(names[k].key);
    if (std::isnan(values[k]))
      j[key] = nullptr;
    else
      j[key] = values[k];
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("eval report: ") + e.what());
  }
  auto number = [&](const char* key) -> double {
    if (!j.contains(key) || !j[key].is_number()) throw ValidationError(std::string("eval report lacks ") + key);
    return j[key].get<double>();
  };
  auto maybe = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key)) throw ValidationError(std::string("eval report lacks ") + key);
    if (j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  EvalReport r;
  r.mse_x_velocity = number("mse_x_velocity");
  r.mse_y_velocity = number("mse_y_velocity");
  r.mse_pressure = number("mse_pressure");
  r.mse_surface_pressure = number("mse_surface_pressure");
  r.mse_turbulent_viscosity = number("mse_turbulent_viscosity");
  r.mean_relative_drag = number("mean_relative_drag");
  r.mean_relative_lift = number("mean_relative_lift");
  r.spearman_drag = maybe("spearman_drag");
  r.spearman_lift = maybe("spearman_lift");
  return r;
}

std::string coefficients_csv(std::span<const SimulationCoefficients> rows) {
  std::string out = "sim,drag_pred,drag_true,lift_pred,lift_true\n";
  for (const auto& r : rows)
    out += r.sim + ',' + format_double(r.pred.drag) + ',' + format_double(r.truth.drag) + ',' +
           format_double(r.pred.lift) + ',' + format_double(r.truth.lift) + '\n';
  return out;
}

}  // namespace packedflow
