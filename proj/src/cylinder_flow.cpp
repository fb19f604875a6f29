#include "packedflow/cylinder_flow.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <random>

#include "packedflow/error.hpp"

namespace packedflow {

namespace {

void check_range(const Range& r, const char* name, bool allow_zero) {
  if (!(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi))
    throw ConfigError(std::string(name) + " must be a finite [lo, hi] with lo <= hi");
  if (!allow_zero && !(r.lo > 0.0)) throw ConfigError(std::string(name) + " must be positive");
}

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

// Band of equal width directly above r.
Range above(const Range& r) {
  const double width = std::max(r.hi - r.lo, 0.5 * std::abs(r.hi));
  return {r.hi + 0.05 * width, r.hi + 1.05 * width};
}

}  // namespace

void CylinderFlowConfig::validate() const {
  if (num_sims < 1) throw ConfigError("num_sims must be >= 1");
  if (surface_points < 3) throw ConfigError("surface_points must be >= 3");
  if (field_points < 3) throw ConfigError("field_points must be >= 3");
  check_range(radius_range, "radius_range", false);
  check_range(inlet_speed_range, "inlet_speed_range", false);
  check_range(circulation_range, "circulation_range", true);
  if (!(domain_factor > 1.0)) throw ConfigError("domain_factor must be > 1");
}

FlowState cylinder_flow(double x, double y, double radius, double inlet_speed, double circulation) {
  // Complex potential W = U (z + R^2 / z) + i Gamma / (2 pi) log z, so that
  // dW/dz = u - i v.
  const std::complex<double> z(x, y);
  const std::complex<double> i(0.0, 1.0);
  const std::complex<double> dw =
      inlet_speed * (1.0 - radius * radius / (z * z)) + i * circulation / (2.0 * std::numbers::pi * z);
  FlowState s;
  s.vx = dw.real();
  s.vy = -dw.imag();
  s.p_over_rho = 0.5 * inlet_speed * inlet_speed - 0.5 * (s.vx * s.vx + s.vy * s.vy);
  return s;
}

Simulation make_cylinder_simulation(const std::string& name, const CylinderCase& c, std::size_t surface_points,
                                    std::size_t field_points, double domain_factor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double step = two_pi / static_cast<double>(surface_points);
  const double phase = unit(rng) * step;

  Simulation sim;
  sim.name = name;
  const std::size_t n = surface_points + field_points;
  sim.points = Matrix(n, kFeatureColumns.size());
  sim.targets = Matrix(n, kTargetColumns.size());

  auto fill = [&](std::size_t row, double x, double y, double distance, double nx, double ny) {
    const FlowState f = cylinder_flow(x, y, c.radius, c.inlet_speed, c.circulation);
    auto p = sim.points.row(row);
    p[feature::x] = x;
    p[feature::y] = y;
    p[feature::inlet_vx] = c.inlet_speed;
    p[feature::inlet_vy] = 0.0;
    p[feature::distance] = distance;
    p[feature::nx] = nx;
    p[feature::ny] = ny;
    auto t = sim.targets.row(row);
    t[target::vx] = f.vx;
    t[target::vy] = f.vy;
    t[target::pressure] = f.p_over_rho;
    t[target::nut] = synthetic_nu_t(distance, std::hypot(f.vx, f.vy));
  };

  for (std::size_t k = 0; k < surface_points; ++k) {
    // Jitter of at most a quarter step keeps the angular order intact.
    const double theta = phase + (static_cast<double>(k) + 0.5 * (unit(rng) - 0.5)) * step;
    const double nx = std::cos(theta);
    const double ny = std::sin(theta);
    fill(k, c.radius * nx, c.radius * ny, 0.0, nx, ny);
  }
  const double log_far = std::log(domain_factor);
  for (std::size_t k = 0; k < field_points; ++k) {
    const double u = 1.0 - unit(rng);  // (0, 1]
    const double r = c.radius * std::exp(u * log_far);
    const double theta = unit(rng) * two_pi;
    fill(surface_points + k, r * std::cos(theta), r * std::sin(theta), r - c.radius, 0.0, 0.0);
  }
  sim.validate();
  return sim;
}

Dataset generate_cylinder_flow(const CylinderFlowConfig& config, Split split) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const Range speeds = config.ood ? above(config.inlet_speed_range) : config.inlet_speed_range;
  const Range circulations = config.ood ? above(config.circulation_range) : config.circulation_range;

  Dataset ds;
  ds.split = split;
  for (std::size_t s = 0; s < config.num_sims; ++s) {
    CylinderCase c;
    c.radius = draw(config.radius_range, rng);
    c.inlet_speed = draw(speeds, rng);
    c.circulation = draw(circulations, rng);
    const std::uint64_t sim_seed = rng();
    char name[32];
    std::snprintf(name, sizeof name, "%s_%04zu", config.ood ? "ood" : "sim", s);
    ds.simulations.push_back(
        make_cylinder_simulation(name, c, config.surface_points, config.field_points, config.domain_factor, sim_seed));
  }
  return ds;
}

}  // namespace packedflow
