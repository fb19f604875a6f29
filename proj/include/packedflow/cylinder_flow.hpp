#pragma once

#include <cstddef>
#include <cstdint>

#include "packedflow/data.hpp"

namespace packedflow {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Parameters of the synthetic dataset: inviscid flow past a circular cylinder
// with circulation, sampled on a point cloud.
struct CylinderFlowConfig {
  std::size_t num_sims = 20;
  std::size_t surface_points = 200;
  std::size_t field_points = 800;
  Range radius_range{0.5, 1.0};
  Range inlet_speed_range{10.0, 20.0};
  Range circulation_range{2.0, 10.0};
  // Field points are sampled for R < r <= domain_factor * R.
  double domain_factor = 5.0;
  std::uint64_t seed = 0;
  // Draw inlet speed and circulation from the band just above each range
  // instead of from the range itself.
  bool ood = false;

  // Throws ConfigError.
  void validate() const;
};

struct FlowState {
  double vx = 0.0;
  double vy = 0.0;
  double p_over_rho = 0.0;
};

// Potential flow past a cylinder of radius R centred at the origin, with
// freestream (U, 0) and clockwise circulation Gamma (Gamma > 0 lifts upward,
// lift per unit span / rho = U * Gamma). Pressure is gauge zero at infinity.
FlowState cylinder_flow(double x, double y, double radius, double inlet_speed, double circulation);

// Auxiliary smooth field used as the fourth target.
inline double synthetic_nu_t(double distance, double speed) { return 0.01 * distance * speed; }

struct CylinderCase {
  double radius = 1.0;
  double inlet_speed = 1.0;
  double circulation = 0.0;
};

// One simulation for the given flow parameters. Surface angles are evenly
// spaced with a seeded phase and jitter; field points are log-uniform in
// radius and uniform in angle.
Simulation make_cylinder_simulation(const std::string& name, const CylinderCase& c, std::size_t surface_points,
                                    std::size_t field_points, double domain_factor, std::uint64_t seed);

Dataset generate_cylinder_flow(const CylinderFlowConfig& config, Split split);

}  // namespace packedflow
