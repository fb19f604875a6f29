#include "packedflow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "packedflow/error.hpp"

namespace packedflow {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

void check_channels(const std::vector<double>& v, std::size_t n, const char* what) {
  if (v.size() != n) throw ValidationError(std::string("scaler ") + what + " has wrong channel count");
}

}  // namespace

bool Simulation::is_surface(std::size_t i) const {
  return points(i, feature::nx) != 0.0 || points(i, feature::ny) != 0.0;
}

std::vector<std::size_t> Simulation::surface_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (is_surface(i)) out.push_back(i);
  return out;
}

void Simulation::validate() const {
  auto fail = [&](std::size_t i, const std::string& what) {
    throw ValidationError("simulation '" + name + "' point " + std::to_string(i) + ": " + what);
  };
  if (points.rows() == 0) throw ValidationError("simulation '" + name + "' has no points");
  if (points.cols() != kFeatureColumns.size() || targets.cols() != kTargetColumns.size() ||
      targets.rows() != points.rows())
    throw ValidationError("simulation '" + name + "' has malformed point/target arrays");
  for (std::size_t i = 0; i < size(); ++i) {
    for (double v : points.row(i))
      if (!std::isfinite(v)) fail(i, "non-finite feature");
    for (double v : targets.row(i))
      if (!std::isfinite(v)) fail(i, "non-finite target");
    const double d = points(i, feature::distance);
    if (d < 0.0) fail(i, "negative distance");
    if (is_surface(i)) {
      const double norm = std::hypot(points(i, feature::nx), points(i, feature::ny));
      if (std::abs(norm - 1.0) > kNormalTolerance) fail(i, "surface normal is not unit length");
      if (d != 0.0) fail(i, "surface point with nonzero distance");
    }
  }
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::test:
      return "test";
    case Split::test_ood:
      return "test_ood";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "test_ood") return Split::test_ood;
  throw ValidationError("unknown split label '" + std::string(s) + "'");
}

std::size_t Dataset::total_points() const {
  std::size_t n = 0;
  for (const auto& s : simulations) n += s.size();
  return n;
}

void Dataset::validate() const {
  std::set<std::string> names;
  for (const auto& s : simulations) {
    s.validate();
    if (!names.insert(s.name).second) throw ValidationError("duplicate simulation name '" + s.name + "'");
  }
}

Simulation load_simulation(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path);
  if (!in) throw ParseError(file, 0, "", "cannot open file");

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ParseError(file, 1, "", "empty file");

  constexpr std::size_t kCols = kFeatureColumns.size() + kTargetColumns.size();
  std::array<std::string_view, kCols> expected{};
  std::copy(kFeatureColumns.begin(), kFeatureColumns.end(), expected.begin());
  std::copy(kTargetColumns.begin(), kTargetColumns.end(), expected.begin() + kFeatureColumns.size());

  // column_of[j] = position in the file of expected column j
  const auto header = split_commas(line);
  std::array<std::size_t, kCols> column_of{};
  for (std::size_t j = 0; j < kCols; ++j) {
    auto it = std::find(header.begin(), header.end(), expected[j]);
    if (it == header.end()) throw ParseError(file, 1, std::string(expected[j]), "missing column");
    if (std::find(it + 1, header.end(), expected[j]) != header.end())
      throw ParseError(file, 1, std::string(expected[j]), "duplicate column");
    column_of[j] = static_cast<std::size_t>(it - header.begin());
  }
  for (auto h : header)
    if (std::find(expected.begin(), expected.end(), h) == expected.end())
      throw ParseError(file, 1, std::string(h), "unexpected column");

  std::vector<double> values;
  std::size_t row = 1;
  std::vector<double> fields(kCols);
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != kCols)
      throw ParseError(file, row, "", "expected " + std::to_string(kCols) + " fields, got " +
                                          std::to_string(cells.size()));
    for (std::size_t j = 0; j < kCols; ++j) {
      std::string_view cell = cells[column_of[j]];
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
        throw ParseError(file, row, std::string(expected[j]), "not a number: '" + std::string(cells[column_of[j]]) + "'");
      if (!std::isfinite(v)) throw ParseError(file, row, std::string(expected[j]), "non-finite value");
      fields[j] = v;
    }
    values.insert(values.end(), fields.begin(), fields.end());
  }
  const std::size_t n = values.size() / kCols;
  if (n == 0) throw ParseError(file, row, "", "no data rows");

  Simulation sim;
  sim.name = path.stem().string();
  sim.points = Matrix(n, kFeatureColumns.size());
  sim.targets = Matrix(n, kTargetColumns.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kFeatureColumns.size(); ++c) sim.points(i, c) = values[i * kCols + c];
    for (std::size_t c = 0; c < kTargetColumns.size(); ++c)
      sim.targets(i, c) = values[i * kCols + kFeatureColumns.size() + c];
  }
  sim.validate();
  return sim;
}

void write_simulation(const std::filesystem::path& path, const Simulation& sim) {
  std::string out;
  for (std::size_t c = 0; c < kFeatureColumns.size(); ++c) {
    if (c) out += ',';
    out += kFeatureColumns[c];
  }
  for (auto name : kTargetColumns) {
    out += ',';
    out += name;
  }
  out += '\n';
  for (std::size_t i = 0; i < sim.size(); ++i) {
    for (std::size_t c = 0; c < kFeatureColumns.size(); ++c) {
      if (c) out += ',';
      append_double(out, sim.points(i, c));
    }
    for (std::size_t c = 0; c < kTargetColumns.size(); ++c) {
      out += ',';
      append_double(out, sim.targets(i, c));
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << out;
  if (!f) throw Error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open dataset manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("split") || !manifest.contains("simulations") ||
      !manifest["simulations"].is_array())
    throw ValidationError(manifest_path.string() + ": expected {\"split\": ..., \"simulations\": [...]}");

  Dataset ds;
  ds.split = split_from_string(manifest["split"].get<std::string>());
  for (const auto& entry : manifest["simulations"]) ds.simulations.push_back(load_simulation(dir / entry.get<std::string>()));
  ds.validate();
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& sim : dataset.simulations) {
    const std::string file = sim.name + ".csv";
    write_simulation(dir / file, sim);
    files.push_back(file);
  }
  nlohmann::json manifest = {{"split", to_string(dataset.split)}, {"simulations", files}};
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed writing manifest in " + dir.string());
}

PooledPoints pool_points(const Dataset& dataset) {
  PooledPoints pooled{Matrix(dataset.total_points(), kFeatureColumns.size()),
                      Matrix(dataset.total_points(), kTargetColumns.size())};
  std::size_t offset = 0;
  for (const auto& sim : dataset.simulations) {
    std::copy(sim.points.values().begin(), sim.points.values().end(),
              pooled.inputs.values().begin() + static_cast<std::ptrdiff_t>(offset * kFeatureColumns.size()));
    std::copy(sim.targets.values().begin(), sim.targets.values().end(),
              pooled.targets.values().begin() + static_cast<std::ptrdiff_t>(offset * kTargetColumns.size()));
    offset += sim.size();
  }
  return pooled;
}

namespace {

void fit_channels(const Dataset& train, bool targets, std::vector<double>& mean, std::vector<double>& std) {
  const std::size_t cols = targets ? kTargetColumns.size() : kFeatureColumns.size();
  mean.assign(cols, 0.0);
  std.assign(cols, 0.0);
  std::size_t n = 0;
  for (const auto& sim : train.simulations) {
    const Matrix& m = targets ? sim.targets : sim.points;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += m(i, c);
    n += m.rows();
  }
  for (double& v : mean) v /= static_cast<double>(n);
  // Two-pass variance around the pooled mean.
  for (const auto& sim : train.simulations) {
    const Matrix& m = targets ? sim.targets : sim.points;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = m(i, c) - mean[c];
        std[c] += d * d;
      }
  }
  for (double& v : std) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < kMinStd) v = 1.0;
  }
}

}  // namespace

ScalerPair fit_scaler(const Dataset& train) {
  if (train.total_points() == 0) throw ValidationError("cannot fit a scaler on an empty dataset");
  ScalerPair s;
  fit_channels(train, false, s.input_mean, s.input_std);
  fit_channels(train, true, s.target_mean, s.target_std);
  return s;
}

Matrix apply_scaler(const ScalerPair& scaler, const Matrix& data, ScaleDirection direction, Channels which) {
  const auto& mean = which == Channels::inputs ? scaler.input_mean : scaler.target_mean;
  const auto& std = which == Channels::inputs ? scaler.input_std : scaler.target_std;
  if (data.cols() != mean.size() || std.size() != mean.size())
    throw ShapeError(std::nullopt, "scaler expects " + std::to_string(mean.size()) + " channels, got " +
                                       std::to_string(data.cols()));
  Matrix out(data.rows(), data.cols());
  for (std::size_t i = 0; i < data.rows(); ++i)
    for (std::size_t c = 0; c < data.cols(); ++c)
      out(i, c) = direction == ScaleDirection::forward ? (data(i, c) - mean[c]) / std[c] : data(i, c) * std[c] + mean[c];
  return out;
}

void save_scaler(const std::filesystem::path& path, const ScalerPair& scaler) {
  nlohmann::json j = {{"input_mean", scaler.input_mean},
                      {"input_std", scaler.input_std},
                      {"target_mean", scaler.target_mean},
                      {"target_std", scaler.target_std}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

ScalerPair load_scaler(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scaler file " + path.string());
  ScalerPair s;
  try {
    const auto j = nlohmann::json::parse(in);
    s.input_mean = j.at("input_mean").get<std::vector<double>>();
    s.input_std = j.at("input_std").get<std::vector<double>>();
    s.target_mean = j.at("target_mean").get<std::vector<double>>();
    s.target_std = j.at("target_std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  check_channels(s.input_mean, kFeatureColumns.size(), "input_mean");
  check_channels(s.input_std, kFeatureColumns.size(), "input_std");
  check_channels(s.target_mean, kTargetColumns.size(), "target_mean");
  check_channels(s.target_std, kTargetColumns.size(), "target_std");
  for (const auto* v : {&s.input_std, &s.target_std})
    for (double x : *v)
      if (!(x > 0.0)) throw ValidationError(path.string() + ": std entries must be positive");
  return s;
}

std::vector<Fold> kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold split needs k >= 2");
  const std::size_t n = dataset.size();
  if (n < k)
    throw ConfigError("k-fold split needs at least k=" + std::to_string(k) + " simulations, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Fold> folds(k);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(start + len));
    std::sort(val.begin(), val.end());
    Fold& fold = folds[f];
    fold.train.split = dataset.split;
    fold.validation.split = dataset.split;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::binary_search(val.begin(), val.end(), i))
        fold.validation.simulations.push_back(dataset.simulations[i]);
      else
        fold.train.simulations.push_back(dataset.simulations[i]);
    }
    fold.validation_indices = std::move(val);
    start += len;
  }
  return folds;
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must lie in (0, 1]");
  if (fraction == 1.0) return dataset;
  const std::size_t n = dataset.size();
  // The epsilon keeps products like 0.3 * 10 from rounding up past an integer.
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());

  Dataset out;
  out.split = dataset.split;
  for (std::size_t i : order) out.simulations.push_back(dataset.simulations[i]);
  return out;
}

}  // namespace packedflow
