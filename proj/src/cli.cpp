#include "packedflow/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "packedflow/bench.hpp"
#include "packedflow/cylinder_flow.hpp"
#include "packedflow/data.hpp"
#include "packedflow/error.hpp"
#include "packedflow/metrics.hpp"
#include "packedflow/model_io.hpp"
#include "packedflow/training.hpp"
#include "packedflow/util.hpp"

namespace packedflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads a JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key) {
    if (!has(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return convert<T>(key);
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    return has(key) ? convert<T>(key) : fallback;
  }

  StrictObject object(const std::string& key) {
    if (!has(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return StrictObject(j_.at(key), where_ + "." + key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

  const std::string& where() const { return where_; }

 private:
  template <typename T>
  T convert(const std::string& key) {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t>) {
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + ": key '" + key + "' has the wrong type");
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

struct Options {
  fs::path config;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  fs::path out = "out";
};

json read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Data paths in configs are relative to the config file.
fs::path resolve(const Options& opt, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : opt.config.parent_path() / path;
}

Range parse_range(StrictObject& o, const std::string& key, Range fallback) {
  if (!o.has(key)) return fallback;
  const json& v = o.raw(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(o.where() + ": '" + key + "' must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::vector<std::size_t> parse_widths(StrictObject& o) {
  const json& v = o.raw("hidden_widths");
  if (!v.is_array() || v.empty()) throw ConfigError(o.where() + ": hidden_widths must be a non-empty array");
  std::vector<std::size_t> widths;
  for (const auto& w : v) {
    if (!w.is_number_integer() || w.get<long long>() < 1)
      throw ConfigError(o.where() + ": hidden_widths entries must be positive integers");
    widths.push_back(w.get<std::size_t>());
  }
  return widths;
}

// Reads the architecture keys of o into a spec; with grid_fields=false only M
// and the widths are read (alpha/gamma/dropout come from elsewhere).
PackedSpec parse_spec(StrictObject& o, bool grid_fields) {
  PackedSpec spec;
  spec.num_estimators = o.get<std::size_t>("num_estimators");
  spec.hidden_widths = parse_widths(o);
  if (grid_fields) {
    spec.alpha = o.get_or<std::size_t>("alpha", 1);
    spec.gamma = o.get_or<std::size_t>("gamma", 1);
    spec.dropout_enabled = o.get_or<bool>("dropout", false);
  }
  spec.validate();
  return spec;
}

TrainConfig parse_train(StrictObject o, const Options& opt, bool early_stop_default) {
  TrainConfig cfg;
  cfg.learning_rate = o.get_or<double>("learning_rate", cfg.learning_rate);
  cfg.weight_decay = o.get_or<double>("weight_decay", cfg.weight_decay);
  cfg.max_epochs = o.get_or<std::size_t>("max_epochs", cfg.max_epochs);
  cfg.batch_points = o.get_or<std::size_t>("batch_points", cfg.batch_points);
  cfg.early_stop_enabled = o.get_or<bool>("early_stop", early_stop_default);
  cfg.early_stop_threshold = o.get_or<double>("early_stop_threshold", cfg.early_stop_threshold);
  cfg.early_stop_window = o.get_or<std::size_t>("early_stop_window", cfg.early_stop_window);
  o.finish();
  cfg.seed = opt.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void cmd_gen(const Options& opt, std::ostream& out) {
  const json j = read_config(opt.config);
  StrictObject o(j, "gen config");
  CylinderFlowConfig base;
  base.surface_points = o.get_or<std::size_t>("surface_points", base.surface_points);
  base.field_points = o.get_or<std::size_t>("field_points", base.field_points);
  base.radius_range = parse_range(o, "radius_range", base.radius_range);
  base.inlet_speed_range = parse_range(o, "inlet_speed_range", base.inlet_speed_range);
  base.circulation_range = parse_range(o, "circulation_range", base.circulation_range);
  base.domain_factor = o.get_or<double>("domain_factor", base.domain_factor);
  StrictObject splits = o.object("splits");
  std::vector<std::pair<Split, std::size_t>> wanted;
  for (Split s : {Split::train, Split::test, Split::test_ood}) {
    const std::size_t n = splits.get_or<std::size_t>(to_string(s), 0);
    if (n > 0) wanted.emplace_back(s, n);
  }
  splits.finish();
  o.finish();
  if (wanted.empty()) throw ConfigError("gen config: 'splits' requests no simulations");

  std::vector<std::pair<Split, CylinderFlowConfig>> configs;
  for (auto [split, n] : wanted) {
    CylinderFlowConfig c = base;
    c.num_sims = n;
    c.ood = split == Split::test_ood;
    c.seed = derive_seed(opt.seed, stream::generator + static_cast<std::uint64_t>(split));
    c.validate();
    configs.emplace_back(split, c);
  }
  for (const auto& [split, c] : configs) {
    const Dataset ds = generate_cylinder_flow(c, split);
    write_dataset(opt.out / to_string(split), ds);
    out << "wrote " << ds.size() << " simulations (" << ds.total_points() << " points) to "
        << (opt.out / to_string(split)).string() << "\n";
  }
}

void cmd_train(const Options& opt, std::ostream& out) {
  const json j = read_config(opt.config);
  StrictObject o(j, "train config");
  StrictObject model = o.object("model");
  const PackedSpec spec = parse_spec(model, true);
  model.finish();
  const TrainConfig cfg = parse_train(o.object("train"), opt, false);
  StrictObject data = o.object("data");
  const fs::path train_dir = resolve(opt, data.get<std::string>("train"));
  const std::optional<fs::path> val_dir =
      data.has("val") ? std::optional(resolve(opt, data.get<std::string>("val"))) : std::nullopt;
  data.finish();
  o.finish();

  const Dataset train_data = load_dataset(train_dir);
  std::optional<Dataset> val_data;
  if (val_dir) val_data = load_dataset(*val_dir);
  const ScalerPair scaler = fit_scaler(train_data);
  const TrainResult r = train(spec, train_data, val_data ? &*val_data : nullptr, scaler, cfg);

  fs::create_directories(opt.out);
  save_model(opt.out / "model.pfm", spec, r.params);
  save_scaler(opt.out / "scaler.json", scaler);
  write_history_csv((opt.out / "history.csv").string(), r.history);
  out << spec.label() << " " << format_layers(spec.hidden_widths) << ": " << r.history.epochs.size() << " epochs";
  if (!r.history.epochs.empty()) out << ", final train loss " << r.history.epochs.back().train_loss;
  out << "\n";
}

void cmd_cv(const Options& opt, std::ostream& out) {
  const json j = read_config(opt.config);
  StrictObject o(j, "cv config");
  StrictObject model = o.object("model");
  const PackedSpec base = parse_spec(model, false);
  model.finish();

  const json& grid_json = o.raw("grid");
  if (!grid_json.is_array() || grid_json.empty()) throw ConfigError("cv config: 'grid' must be a non-empty array");
  std::vector<GridPoint> grid;
  for (std::size_t i = 0; i < grid_json.size(); ++i) {
    StrictObject row(grid_json[i], "cv config.grid[" + std::to_string(i) + "]");
    GridPoint p;
    p.dropout = row.get<bool>("dropout");
    p.alpha = row.get<std::size_t>("alpha");
    p.gamma = row.get<std::size_t>("gamma");
    p.learning_rate = row.get<double>("learning_rate");
    row.finish();
    if (!(p.learning_rate > 0.0)) throw ConfigError(row.where() + ": learning_rate must be positive");
    grid.push_back(p);
  }
  CVOptions cv;
  cv.folds = o.get_or<std::size_t>("folds", 4);
  cv.jobs = opt.jobs;
  const double fraction = o.get_or<double>("subsample_fraction", 1.0);
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("cv config: subsample_fraction must lie in (0, 1]");
  const TrainConfig cfg = parse_train(o.object("train"), opt, true);
  StrictObject data = o.object("data");
  const fs::path train_dir = resolve(opt, data.get<std::string>("train"));
  data.finish();
  o.finish();

  const Dataset full = load_dataset(train_dir);
  const Dataset dataset = subsample(full, fraction, derive_seed(opt.seed, stream::subsample));
  const CVResult result = cross_validate(dataset, grid, base, cfg, cv);

  fs::create_directories(opt.out);
  write_text(opt.out / "cv_results.csv", cv_results_csv(result));
  write_text(opt.out / "cv_folds.csv", cv_folds_csv(result));
  out << cv_results_csv(result);
}

void cmd_eval(const Options& opt, std::ostream& out) {
  const json j = read_config(opt.config);
  StrictObject o(j, "eval config");
  const fs::path model_path = resolve(opt, o.get<std::string>("model"));
  const fs::path scaler_path = resolve(opt, o.get<std::string>("scaler"));
  const fs::path data_dir = resolve(opt, o.get<std::string>("dataset"));
  o.finish();

  const ModelFile model = load_model(model_path);
  const ScalerPair scaler = load_scaler(scaler_path);
  const Dataset dataset = load_dataset(data_dir);
  const Evaluation ev = evaluate(model.params, make_architecture(model.spec), scaler, dataset);

  fs::create_directories(opt.out);
  write_text(opt.out / "eval_report.json", report_json(ev.report));
  write_text(opt.out / "coefficients.csv", coefficients_csv(ev.per_simulation));
  out << report_json(ev.report);
}

void cmd_bench(const Options& opt, std::ostream& out) {
  const json j = read_config(opt.config);
  StrictObject o(j, "bench config");
  const json& models_json = o.raw("models");
  if (!models_json.is_array() || models_json.empty())
    throw ConfigError("bench config: 'models' must be a non-empty array");
  std::vector<BenchModel> models;
  std::set<std::string> names;
  for (std::size_t i = 0; i < models_json.size(); ++i) {
    StrictObject m(models_json[i], "bench config.models[" + std::to_string(i) + "]");
    BenchModel bm;
    bm.name = m.get_or<std::string>("name", std::to_string(i + 1));
    bm.spec = parse_spec(m, true);
    bm.learning_rate = m.get<double>("learning_rate");
    bm.weight_decay = m.get_or<double>("weight_decay", 0.0);
    m.finish();
    if (!names.insert(bm.name).second) throw ConfigError(m.where() + ": duplicate model name '" + bm.name + "'");
    if (bm.name.find_first_of("/\\") != std::string::npos)
      throw ConfigError(m.where() + ": model name must not contain path separators");
    models.push_back(std::move(bm));
  }
  TrainConfig cfg = parse_train(o.object("train"), opt, false);
  if (cfg.early_stop_enabled) throw ConfigError("bench config: early_stop must be off so runs do equal epochs");
  StrictObject data = o.object("data");
  const fs::path train_dir = resolve(opt, data.get<std::string>("train"));
  std::vector<fs::path> split_dirs;
  for (const char* key : {"test", "test_ood"})
    if (data.has(key)) split_dirs.push_back(resolve(opt, data.get<std::string>(key)));
  data.finish();
  o.finish();
  if (split_dirs.empty()) throw ConfigError("bench config: data needs 'test' and/or 'test_ood'");

  const Dataset train_data = load_dataset(train_dir);
  std::vector<Dataset> splits;
  for (const auto& d : split_dirs) splits.push_back(load_dataset(d));

  const BenchReport report = run_benchmark(models, cfg, train_data, splits);
  fs::create_directories(opt.out / "logs");
  const std::string raw = bench_raw_json(report);
  write_text(opt.out / "bench_raw.json", raw);
  // Tables are rendered from the persisted log, not from memory.
  const BenchReport persisted = bench_from_raw_json(raw);
  for (std::size_t s = 0; s < persisted.splits.size(); ++s) {
    const std::string stem = std::string("bench_") + to_string(persisted.splits[s]);
    write_text(opt.out / (stem + ".csv"), bench_csv(persisted, s));
    const std::string table = bench_text_table(persisted, s);
    write_text(opt.out / (stem + ".txt"), table);
    out << table << "\n";
  }
  for (const BenchRow& row : persisted.rows) {
    std::string log = "epoch,train_loss\n";
    for (std::size_t e = 0; e < row.epoch_losses.size(); ++e)
      log += std::to_string(e + 1) + "," + format_double(row.epoch_losses[e]) + "\n";
    write_text(opt.out / "logs" / (row.name + "_history.csv"), log);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Packed-Ensemble MLP surrogates for 2-D flow fields", "packedflow"};
  app.require_subcommand(1);

  Options opt;
  std::string config;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config, "JSON config file");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "seed for every random stream");
    sub->add_option("--jobs", opt.jobs, "parallel cross-validation trainings")->check(CLI::PositiveNumber);
    sub->add_option("--out", opt.out, "output directory");
  };
  CLI::App* gen = app.add_subcommand("gen", "generate synthetic cylinder-flow datasets");
  CLI::App* train_cmd = app.add_subcommand("train", "train one packed network");
  CLI::App* cv = app.add_subcommand("cv", "cross-validate a hyperparameter grid");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model on one split");
  CLI::App* bench = app.add_subcommand("bench", "time and evaluate a list of models");
  for (CLI::App* sub : {gen, train_cmd, cv, eval, bench}) add_common(sub, true);

  std::vector<const char*> argv;
  argv.push_back("packedflow");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }
  opt.config = config;

  try {
    if (gen->parsed()) cmd_gen(opt, out);
    if (train_cmd->parsed()) cmd_train(opt, out);
    if (cv->parsed()) cmd_cv(opt, out);
    if (eval->parsed()) cmd_eval(opt, out);
    if (bench->parsed()) cmd_bench(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace packedflow
