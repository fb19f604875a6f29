#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <unistd.h>

#include "oracles.hpp"
#include "packedflow/cylinder_flow.hpp"
#include "packedflow/data.hpp"
#include "packedflow/error.hpp"
#include "packedflow/util.hpp"

using namespace packedflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("packedflow_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

Simulation random_simulation(const std::string& name, std::size_t n, std::mt19937_64& rng) {
  Simulation s;
  s.name = name;
  s.points = oracle::random_matrix(n, 7, rng, 5.0);
  s.targets = oracle::random_matrix(n, 4, rng, 50.0);
  for (std::size_t i = 0; i < n; ++i) {
    s.points(i, feature::distance) = std::abs(s.points(i, feature::distance)) + 0.1;
    s.points(i, feature::nx) = 0.0;
    s.points(i, feature::ny) = 0.0;
  }
  // One surface point with a unit normal.
  s.points(0, feature::distance) = 0.0;
  s.points(0, feature::nx) = 0.6;
  s.points(0, feature::ny) = -0.8;
  return s;
}

Dataset numbered_dataset(std::size_t n) {
  Dataset d;
  std::mt19937_64 rng(n);
  for (std::size_t i = 0; i < n; ++i) d.simulations.push_back(random_simulation("s" + std::to_string(i), 3, rng));
  return d;
}

const std::string kHeader = "x,y,inlet_vx,inlet_vy,distance,nx,ny,vx,vy,p,nut\n";

}  // namespace

TEST_CASE("load_simulation parses a well-formed file") {
  TempDir dir;
  const fs::path f = dir.path / "a.csv";
  write_text(f, kHeader + "1,2,10,0,0,1,0,0.5,-0.5,3.25,0\n-1.5,0.25,10,0,0.5,0,0,9,8,7,6e-3\n");
  const Simulation s = load_simulation(f);
  CHECK(s.name == "a");
  REQUIRE(s.size() == 2);
  CHECK(s.points(0, feature::x) == 1.0);
  CHECK(s.points(1, feature::y) == 0.25);
  CHECK(s.targets(0, target::pressure) == 3.25);
  CHECK(s.targets(1, target::nut) == 6e-3);
  CHECK(s.is_surface(0));
  CHECK_FALSE(s.is_surface(1));
  CHECK(s.surface_indices() == std::vector<std::size_t>{0});
}

TEST_CASE("columns are matched by name") {
  TempDir dir;
  const fs::path f = dir.path / "b.csv";
  write_text(f, "nut,p,vy,vx,ny,nx,distance,inlet_vy,inlet_vx,y,x\n4,3,2,1,0,0,1,0,10,6,5\n");
  const Simulation s = load_simulation(f);
  CHECK(s.points(0, feature::x) == 5.0);
  CHECK(s.points(0, feature::inlet_vx) == 10.0);
  CHECK(s.targets(0, target::vx) == 1.0);
  CHECK(s.targets(0, target::nut) == 4.0);
}

TEST_CASE("malformed files raise located parse errors") {
  TempDir dir;
  const fs::path f = dir.path / "bad.csv";
  auto expect_parse_error = [&](const std::string& text, std::size_t row, const std::string& column) {
    write_text(f, text);
    try {
      load_simulation(f);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.row() == row);
      CHECK(e.column() == column);
    }
  };
  expect_parse_error("x,y,inlet_vx,inlet_vy,distance,nx,ny,vx,vy,p\n1,2,3,4,5,0,0,1,2,3\n", 1, "nut");
  expect_parse_error(kHeader.substr(0, kHeader.size() - 1) + ",extra\n1,2,3,4,5,0,0,1,2,3,4,5\n", 1, "extra");
  expect_parse_error(kHeader + "1,2,3,4,5,0,0,1,2,3,4\n1,2,3,4,abc,0,0,1,2,3,4\n", 3, "distance");
  expect_parse_error(kHeader + "1,2,3,4,5,0,0,1,2,3,nan\n", 2, "nut");
  expect_parse_error(kHeader + "1,2,3,4,5,0,0,1,2,3\n", 2, "");
  expect_parse_error(kHeader + "1,2,3,4,5,0,0,1,2,3,4,9\n", 2, "");
  expect_parse_error("", 1, "");
  expect_parse_error(kHeader, 1, "");
}

TEST_CASE("simulation invariants are enforced on load") {
  TempDir dir;
  const fs::path f = dir.path / "inv.csv";
  write_text(f, kHeader + "1,2,10,0,-0.5,0,0,1,2,3,4\n");
  CHECK_THROWS_AS(load_simulation(f), ValidationError);
  write_text(f, kHeader + "1,2,10,0,0,0.5,0,1,2,3,4\n");  // normal not unit
  CHECK_THROWS_AS(load_simulation(f), ValidationError);
  write_text(f, kHeader + "1,2,10,0,0.3,1,0,1,2,3,4\n");  // normal off surface
  CHECK_THROWS_AS(load_simulation(f), ValidationError);
}

TEST_CASE("write then load round-trips exactly") {
  TempDir dir;
  std::mt19937_64 rng(3);
  const Simulation s = random_simulation("round", 40, rng);
  write_simulation(dir.path / "round.csv", s);
  const Simulation back = load_simulation(dir.path / "round.csv");
  CHECK(back.name == s.name);
  REQUIRE(back.points.rows() == s.points.rows());
  for (std::size_t i = 0; i < s.points.size(); ++i) CHECK(std::abs(back.points.values()[i] - s.points.values()[i]) <= 1e-12);
  for (std::size_t i = 0; i < s.targets.size(); ++i)
    CHECK(std::abs(back.targets.values()[i] - s.targets.values()[i]) <= 1e-12);

  Dataset d = numbered_dataset(3);
  d.split = Split::test_ood;
  write_dataset(dir.path / "ds", d);
  const Dataset loaded = load_dataset(dir.path / "ds");
  CHECK(loaded.split == Split::test_ood);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.simulations[i].name == d.simulations[i].name);
    CHECK(loaded.simulations[i].points == d.simulations[i].points);
    CHECK(loaded.simulations[i].targets == d.simulations[i].targets);
  }
}

TEST_CASE("datasets reject duplicate names") {
  Dataset d = numbered_dataset(2);
  d.simulations[1].name = d.simulations[0].name;
  CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("fit_scaler small cases") {
  Dataset d;
  Simulation s;
  s.name = "two";
  s.points = Matrix(2, 7, 0.0);
  s.targets = Matrix(2, 4, 0.0);
  s.points(0, feature::x) = 0.0;
  s.points(1, feature::x) = 2.0;
  for (std::size_t i = 0; i < 2; ++i) {
    s.points(i, feature::inlet_vx) = 7.5;
    s.points(i, feature::distance) = 1.0;
  }
  d.simulations.push_back(s);
  const ScalerPair sc = fit_scaler(d);
  CHECK(sc.input_mean[feature::x] == 1.0);
  CHECK(sc.input_std[feature::x] == 1.0);
  CHECK(sc.input_mean[feature::inlet_vx] == 7.5);
  CHECK(sc.input_std[feature::inlet_vx] == 1.0);
  const Matrix scaled = apply_scaler(sc, s.points, ScaleDirection::forward, Channels::inputs);
  CHECK(scaled(0, feature::inlet_vx) == 0.0);
  CHECK(scaled(0, feature::x) == -1.0);
  for (double v : sc.target_std) CHECK(v == 1.0);
}

TEST_CASE("fit_scaler equals statistics of the concatenated points") {
  std::mt19937_64 rng(5);
  Dataset d;
  d.simulations.push_back(random_simulation("a", 17, rng));
  d.simulations.push_back(random_simulation("b", 29, rng));
  const ScalerPair sc = fit_scaler(d);

  auto stats = [&](bool inputs, std::size_t c) {
    std::vector<double> v;
    for (const auto& s : d.simulations)
      for (std::size_t i = 0; i < s.size(); ++i) v.push_back(inputs ? s.points(i, c) : s.targets(i, c));
    long double sum = 0;
    for (double x : v) sum += x;
    const long double mean = sum / v.size();
    long double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair<double, double>(static_cast<double>(mean), static_cast<double>(std::sqrt(ss / v.size())));
  };
  for (std::size_t c = 0; c < 7; ++c) {
    const auto [m, sd] = stats(true, c);
    CHECK(sc.input_mean[c] == doctest::Approx(m).epsilon(1e-12));
    if (sd > 1e-12) CHECK(sc.input_std[c] == doctest::Approx(sd).epsilon(1e-12));
  }
  for (std::size_t c = 0; c < 4; ++c) {
    const auto [m, sd] = stats(false, c);
    CHECK(sc.target_mean[c] == doctest::Approx(m).epsilon(1e-12));
    CHECK(sc.target_std[c] == doctest::Approx(sd).epsilon(1e-12));
  }
}

TEST_CASE("apply_scaler identities") {
  std::mt19937_64 rng(7);
  Dataset d;
  d.simulations.push_back(random_simulation("a", 50, rng));
  d.simulations.push_back(random_simulation("b", 30, rng));
  const ScalerPair sc = fit_scaler(d);

  const Matrix raw = oracle::random_matrix(25, 4, rng, 1e3);
  const Matrix back = apply_scaler(sc, apply_scaler(sc, raw, ScaleDirection::forward, Channels::targets),
                                   ScaleDirection::inverse, Channels::targets);
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(std::abs(back.values()[i] - raw.values()[i]) <= 1e-9);

  const auto pooled = pool_points(d);
  const Matrix z = apply_scaler(sc, pooled.inputs, ScaleDirection::forward, Channels::inputs);
  for (std::size_t c = 0; c < 7; ++c) {
    double m = 0, ss = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) m += z(i, c);
    m /= static_cast<double>(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) ss += (z(i, c) - m) * (z(i, c) - m);
    CHECK(std::abs(m) <= 1e-9);
    CHECK(std::abs(std::sqrt(ss / static_cast<double>(z.rows())) - 1.0) <= 1e-9);
  }

  const Matrix zero(3, 4, 0.0);
  const Matrix inv = apply_scaler(sc, zero, ScaleDirection::inverse, Channels::targets);
  for (std::size_t c = 0; c < 4; ++c) CHECK(inv(1, c) == sc.target_mean[c]);

  CHECK_THROWS_AS(apply_scaler(sc, zero, ScaleDirection::forward, Channels::inputs), ShapeError);
}

TEST_CASE("scaler files round-trip") {
  TempDir dir;
  std::mt19937_64 rng(9);
  Dataset d;
  d.simulations.push_back(random_simulation("a", 10, rng));
  const ScalerPair sc = fit_scaler(d);
  save_scaler(dir.path / "scaler.json", sc);
  CHECK(load_scaler(dir.path / "scaler.json") == sc);
}

TEST_CASE("kfold_split partitions simulations") {
  const Dataset d8 = numbered_dataset(8);
  const auto folds = kfold_split(d8, 4, 1);
  REQUIRE(folds.size() == 4);
  std::multiset<std::string> seen;
  for (const Fold& f : folds) {
    CHECK(f.validation.size() == 2);
    CHECK(f.train.size() == 6);
    for (const auto& s : f.validation.simulations) seen.insert(s.name);
    std::set<std::string> train_names;
    for (const auto& s : f.train.simulations) train_names.insert(s.name);
    for (const auto& s : f.validation.simulations) CHECK(train_names.count(s.name) == 0);
  }
  CHECK(seen.size() == 8);
  CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 8);

  const auto again = kfold_split(d8, 4, 1);
  for (std::size_t k = 0; k < 4; ++k) CHECK(again[k].validation_indices == folds[k].validation_indices);
  bool differs = false;
  const auto other = kfold_split(d8, 4, 2);
  for (std::size_t k = 0; k < 4; ++k) differs |= other[k].validation_indices != folds[k].validation_indices;
  CHECK(differs);

  const auto big = kfold_split(numbered_dataset(103), 4, 3);
  std::multiset<std::size_t> sizes;
  std::set<std::size_t> all;
  for (const Fold& f : big) {
    sizes.insert(f.validation.size());
    all.insert(f.validation_indices.begin(), f.validation_indices.end());
  }
  CHECK(sizes == std::multiset<std::size_t>{25, 26, 26, 26});
  CHECK(all.size() == 103);

  CHECK_THROWS_AS(kfold_split(numbered_dataset(3), 4, 0), ConfigError);
  CHECK_THROWS_AS(kfold_split(d8, 1, 0), ConfigError);
}

TEST_CASE("kfold partition property for many sizes") {
  for (std::size_t n = 2; n < 40; ++n)
    for (std::size_t k = 2; k <= std::min<std::size_t>(n, 6); ++k) {
      const auto folds = kfold_split(numbered_dataset(n), k, n * 31 + k);
      std::vector<int> count(n, 0);
      std::size_t lo = n, hi = 0;
      for (const Fold& f : folds) {
        for (std::size_t i : f.validation_indices) ++count[i];
        lo = std::min(lo, f.validation.size());
        hi = std::max(hi, f.validation.size());
        CHECK(f.train.size() + f.validation.size() == n);
      }
      CHECK(hi - lo <= 1);
      for (int c : count) CHECK(c == 1);
    }
}

TEST_CASE("subsample keeps a seeded subset in order") {
  const Dataset d = numbered_dataset(103);
  const Dataset full = subsample(d, 1.0, 4);
  REQUIRE(full.size() == 103);
  for (std::size_t i = 0; i < 103; ++i) CHECK(full.simulations[i].name == d.simulations[i].name);

  const Dataset third = subsample(d, 1.0 / 3.0, 4);
  CHECK(third.size() == 35);
  const Dataset again = subsample(d, 1.0 / 3.0, 4);
  for (std::size_t i = 0; i < 35; ++i) CHECK(again.simulations[i].name == third.simulations[i].name);
  // Original order is preserved.
  std::size_t last = 0;
  for (const auto& s : third.simulations) {
    const std::size_t idx = std::stoul(s.name.substr(1));
    CHECK(idx >= last);
    last = idx;
  }
  CHECK(subsample(numbered_dataset(10), 0.5, 1).size() == 5);
  CHECK_THROWS_AS(subsample(d, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(subsample(d, 1.5, 1), ConfigError);
}

TEST_CASE("generated simulations satisfy the surface construction") {
  CylinderFlowConfig cfg;
  cfg.num_sims = 3;
  cfg.surface_points = 64;
  cfg.field_points = 200;
  cfg.seed = 12;
  const Dataset d = generate_cylinder_flow(cfg, Split::train);
  REQUIRE(d.size() == 3);
  CHECK_NOTHROW(d.validate());
  for (const Simulation& s : d.simulations) {
    CHECK(s.size() == 264);
    const double u = s.points(0, feature::inlet_vx);
    CHECK(u >= 10.0);
    CHECK(u <= 20.0);
    const auto surf = s.surface_indices();
    CHECK(surf.size() == 64);
    // All surface points share one radius; normals are unit radial.
    const double r0 = std::hypot(s.points(surf[0], feature::x), s.points(surf[0], feature::y));
    CHECK(r0 >= 0.5);
    CHECK(r0 <= 1.0);
    for (std::size_t i : surf) {
      const double x = s.points(i, feature::x), y = s.points(i, feature::y);
      const double r = std::hypot(x, y);
      CHECK(r == doctest::Approx(r0).epsilon(1e-12));
      CHECK(s.points(i, feature::distance) == 0.0);
      CHECK(s.points(i, feature::nx) == doctest::Approx(x / r).epsilon(1e-12));
      CHECK(s.points(i, feature::ny) == doctest::Approx(y / r).epsilon(1e-12));
      CHECK(s.targets(i, target::nut) == 0.0);
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.is_surface(i)) continue;
      const double r = std::hypot(s.points(i, feature::x), s.points(i, feature::y));
      CHECK(s.points(i, feature::distance) == doctest::Approx(r - r0).epsilon(1e-12));
      CHECK(r > r0);
      CHECK(r <= 5.0 * r0 * (1 + 1e-12));
    }
  }
  // Deterministic in the seed.
  const Dataset again = generate_cylinder_flow(cfg, Split::train);
  for (std::size_t k = 0; k < 3; ++k) CHECK(again.simulations[k].points == d.simulations[k].points);
}

TEST_CASE("potential flow far field, stagnation and Bernoulli") {
  const double R = 0.8, U = 13.0;
  for (double theta = 0.0; theta < 2 * std::numbers::pi; theta += 0.3) {
    const double x = 100 * R * std::cos(theta), y = 100 * R * std::sin(theta);
    const FlowState f = cylinder_flow(x, y, R, U, 0.0);
    CHECK(std::hypot(f.vx - U, f.vy) <= 1e-3 * U);
    // With circulation the vortex part decays only as 1/r.
    const double gamma = 6.0;
    const FlowState g = cylinder_flow(x, y, R, U, gamma);
    CHECK(std::hypot(g.vx - U, g.vy) <= U * 1e-4 + gamma / (2 * std::numbers::pi * 100 * R) + 1e-12);
  }
  const FlowState stag = cylinder_flow(-R, 0.0, R, U, 0.0);
  CHECK(std::abs(stag.vx) <= 1e-12 * U);
  CHECK(std::abs(stag.vy) <= 1e-12 * U);
  CHECK(stag.p_over_rho == doctest::Approx(0.5 * U * U).epsilon(1e-12));

  // Closed-form comparison at an arbitrary point: u_r, u_theta in polar form.
  const double x = 1.3, y = -0.7, gamma = 4.0;
  const double r = std::hypot(x, y), th = std::atan2(y, x);
  const double ur = U * (1 - R * R / (r * r)) * std::cos(th);
  const double ut = -U * (1 + R * R / (r * r)) * std::sin(th) - gamma / (2 * std::numbers::pi * r);
  const double vx = ur * std::cos(th) - ut * std::sin(th), vy = ur * std::sin(th) + ut * std::cos(th);
  const FlowState f = cylinder_flow(x, y, R, U, gamma);
  CHECK(f.vx == doctest::Approx(vx).epsilon(1e-12));
  CHECK(f.vy == doctest::Approx(vy).epsilon(1e-12));
  CHECK(f.p_over_rho == doctest::Approx(0.5 * U * U - 0.5 * (vx * vx + vy * vy)).epsilon(1e-12));
}

TEST_CASE("generated velocity field is divergence free") {
  const double R = 0.7, U = 15.0, h = 1e-4 * R;
  for (double gamma : {0.0, 5.0}) {
    double worst = 0.0;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const double x = 0.4 * R * i, y = 0.4 * R * j;
        if (std::hypot(x, y) < 1.2 * R) continue;
        const double div = (cylinder_flow(x + h, y, R, U, gamma).vx - cylinder_flow(x - h, y, R, U, gamma).vx) / (2 * h) +
                           (cylinder_flow(x, y + h, R, U, gamma).vy - cylinder_flow(x, y - h, R, U, gamma).vy) / (2 * h);
        worst = std::max(worst, std::abs(div));
      }
    CHECK(worst < 1e-6 * U / R);
  }
}

TEST_CASE("surface points are tangential flow") {
  CylinderFlowConfig cfg;
  cfg.num_sims = 2;
  cfg.seed = 4;
  for (const Simulation& s : generate_cylinder_flow(cfg, Split::test).simulations)
    for (std::size_t i : s.surface_indices()) {
      const double un = s.targets(i, target::vx) * s.points(i, feature::nx) + s.targets(i, target::vy) * s.points(i, feature::ny);
      CHECK(std::abs(un) <= 1e-9 * s.points(i, feature::inlet_vx));
    }
}

TEST_CASE("OOD draws lie outside the in-distribution ranges") {
  CylinderFlowConfig cfg;
  cfg.num_sims = 20;
  cfg.surface_points = 8;
  cfg.field_points = 8;
  cfg.seed = 77;
  cfg.ood = true;
  const Dataset d = generate_cylinder_flow(cfg, Split::test_ood);
  for (const Simulation& s : d.simulations) {
    CHECK(s.name.rfind("ood_", 0) == 0);
    CHECK(s.points(0, feature::inlet_vx) > cfg.inlet_speed_range.hi);
  }
  cfg.ood = false;
  for (const Simulation& s : generate_cylinder_flow(cfg, Split::train).simulations) {
    CHECK(s.name.rfind("sim_", 0) == 0);
    CHECK(s.points(0, feature::inlet_vx) <= cfg.inlet_speed_range.hi);
  }
}

TEST_CASE("generator config validation") {
  CylinderFlowConfig cfg;
  cfg.surface_points = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.radius_range = {1.0, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.domain_factor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
