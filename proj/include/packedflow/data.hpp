#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "packedflow/matrix.hpp"

namespace packedflow {

// Column order of the point features and of the regression targets.
inline constexpr std::array<std::string_view, 7> kFeatureColumns = {"x",        "y",  "inlet_vx", "inlet_vy",
                                                                    "distance", "nx", "ny"};
inline constexpr std::array<std::string_view, 4> kTargetColumns = {"vx", "vy", "p", "nut"};

namespace feature {
inline constexpr std::size_t x = 0, y = 1, inlet_vx = 2, inlet_vy = 3, distance = 4, nx = 5, ny = 6;
}
namespace target {
inline constexpr std::size_t vx = 0, vy = 1, pressure = 2, nut = 3;
}

inline constexpr double kNormalTolerance = 1e-6;

// One flow field sampled on an unordered point cloud.
struct Simulation {
  std::string name;
  Matrix points;   // N x 7, kFeatureColumns
  Matrix targets;  // N x 4, kTargetColumns

  std::size_t size() const { return points.rows(); }
  bool is_surface(std::size_t i) const;
  std::vector<std::size_t> surface_indices() const;
  // Throws ValidationError naming the simulation and offending point.
  void validate() const;
};

enum class Split { train, test, test_ood };

const char* to_string(Split split);
Split split_from_string(std::string_view s);

struct Dataset {
  std::vector<Simulation> simulations;
  Split split = Split::train;

  std::size_t size() const { return simulations.size(); }
  std::size_t total_points() const;
  // Validates every simulation and name uniqueness.
  void validate() const;
};

Simulation load_simulation(const std::filesystem::path& path);
void write_simulation(const std::filesystem::path& path, const Simulation& sim);

// A dataset directory holds manifest.json plus one CSV per simulation.
inline constexpr std::string_view kManifestName = "manifest.json";
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

// All points of all simulations, concatenated in dataset order.
struct PooledPoints {
  Matrix inputs;
  Matrix targets;
};
PooledPoints pool_points(const Dataset& dataset);

// Per-channel standardization of inputs and targets.
struct ScalerPair {
  std::vector<double> input_mean, input_std;
  std::vector<double> target_mean, target_std;

  friend bool operator==(const ScalerPair&, const ScalerPair&) = default;
};

inline constexpr double kMinStd = 1e-12;

ScalerPair fit_scaler(const Dataset& train);

enum class ScaleDirection { forward, inverse };
enum class Channels { inputs, targets };

Matrix apply_scaler(const ScalerPair& scaler, const Matrix& data, ScaleDirection direction, Channels which);

void save_scaler(const std::filesystem::path& path, const ScalerPair& scaler);
ScalerPair load_scaler(const std::filesystem::path& path);

struct Fold {
  Dataset train;
  Dataset validation;
  std::vector<std::size_t> validation_indices;  // positions in the source dataset
};

// Seeded partition of the simulations into k validation folds whose sizes
// differ by at most one.
std::vector<Fold> kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// Keeps ceil(fraction * size) simulations picked by a seeded shuffle, in their
// original order.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

}  // namespace packedflow
