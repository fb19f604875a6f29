#include "packedflow/training.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "packedflow/error.hpp"
#include "packedflow/util.hpp"

namespace packedflow {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0 && std::isfinite(weight_decay))) throw ConfigError("weight_decay must be non-negative");
  if (batch_points < 1) throw ConfigError("batch_points must be >= 1");
  if (!(early_stop_threshold > 0.0 && early_stop_threshold < 1.0))
    throw ConfigError("early_stop_threshold must lie in (0, 1)");
  if (early_stop_window < 1) throw ConfigError("early_stop_window must be >= 1");
}

AdamState AdamState::zeros_like(std::span<const LayerPlan> plans) {
  return {Params::zeros_like(plans), Params::zeros_like(plans), 0};
}

namespace {

void adam_update(std::vector<double>& theta, const std::vector<double>& grad, std::vector<double>& m,
                 std::vector<double>& v, double lr, double decay, double correction1, double correction2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i] + decay * theta[i];
    m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
    v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
  }
}

}  // namespace

void adam_step(Params& params, const Grads& grads, AdamState& state, double learning_rate, double weight_decay) {
  if (grads.layers.size() != params.layers.size() || state.first_moment.layers.size() != params.layers.size() ||
      state.second_moment.layers.size() != params.layers.size())
    throw ShapeError(std::nullopt, "adam_step: params, grads and moments disagree in layer count");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    const std::array<const Params*, 3> others = {&grads, &state.first_moment, &state.second_moment};
    for (const Params* other : others)
      if (other->layers[l].weights.size() != p.weights.size() || other->layers[l].biases.size() != p.biases.size())
        throw ShapeError(l, "adam_step: shape mismatch");
  }
  if (!grads.all_finite()) throw Error("non-finite gradient");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    const auto& g = grads.layers[l];
    auto& m = state.first_moment.layers[l];
    auto& v = state.second_moment.layers[l];
    adam_update(p.weights, g.weights, m.weights, v.weights, learning_rate, weight_decay, c1, c2);
    adam_update(p.biases, g.biases, m.biases, v.biases, learning_rate, 0.0, c1, c2);
  }
}

bool early_stop(std::span<const double> losses, double threshold, std::size_t window) {
  if (losses.size() < window + 1) return false;
  for (std::size_t t = losses.size() - window; t < losses.size(); ++t) {
    const double prev = losses[t - 1];
    const double change = prev == 0.0 ? 0.0 : std::abs(losses[t] - prev) / std::abs(prev);
    if (!(change < threshold)) return false;
  }
  return true;
}

std::vector<double> TrainHistory::train_losses() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.train_loss);
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 8192;

void gather_rows(const Matrix& src, std::span<const std::size_t> rows, Matrix& dst) {
  dst.resize(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto from = src.row(rows[i]);
    std::copy(from.begin(), from.end(), dst.row(i).begin());
  }
}

void copy_rows(const Matrix& src, std::size_t begin, std::size_t end, Matrix& dst) {
  dst.resize(end - begin, src.cols());
  std::copy(src.values().begin() + static_cast<std::ptrdiff_t>(begin * src.cols()),
            src.values().begin() + static_cast<std::ptrdiff_t>(end * src.cols()), dst.values().begin());
}

double sum_squared_error(Workspace& ws, const Params& params, const Architecture& arch, const Matrix& inputs,
                         const Matrix& targets) {
  double sse = 0.0;
  Matrix xb, yb;
  for (std::size_t begin = 0; begin < inputs.rows(); begin += kEvalChunk) {
    const std::size_t end = std::min(inputs.rows(), begin + kEvalChunk);
    copy_rows(inputs, begin, end, xb);
    copy_rows(targets, begin, end, yb);
    const Matrix& pred = ws.predict(params, arch, xb);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = pred.values()[i] - yb.values()[i];
      sse += r * r;
    }
  }
  return sse;
}

}  // namespace

double scaled_mse(const Params& params, const Architecture& arch, const Dataset& data, const ScalerPair& scaler) {
  const PooledPoints pooled = pool_points(data);
  if (pooled.inputs.rows() == 0) throw ValidationError("scaled_mse on an empty dataset");
  const Matrix x = apply_scaler(scaler, pooled.inputs, ScaleDirection::forward, Channels::inputs);
  const Matrix y = apply_scaler(scaler, pooled.targets, ScaleDirection::forward, Channels::targets);
  Workspace ws;
  return sum_squared_error(ws, params, arch, x, y) / static_cast<double>(y.size());
}

Matrix predict_simulation(const Params& params, const Architecture& arch, const ScalerPair& scaler,
                          const Simulation& sim) {
  const Matrix x = apply_scaler(scaler, sim.points, ScaleDirection::forward, Channels::inputs);
  Matrix scaled(x.rows(), arch.out_features);
  Workspace ws;
  Matrix xb;
  for (std::size_t begin = 0; begin < x.rows(); begin += kEvalChunk) {
    const std::size_t end = std::min(x.rows(), begin + kEvalChunk);
    copy_rows(x, begin, end, xb);
    const Matrix& pred = ws.predict(params, arch, xb);
    std::copy(pred.values().begin(), pred.values().end(),
              scaled.values().begin() + static_cast<std::ptrdiff_t>(begin * arch.out_features));
  }
  return apply_scaler(scaler, scaled, ScaleDirection::inverse, Channels::targets);
}

TrainResult train(const PackedSpec& spec, const Dataset& train_data, const Dataset* val_data, const ScalerPair& scaler,
                  const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (train_data.total_points() == 0) throw ValidationError("training data is empty");

  const Architecture arch = make_architecture(spec);
  TrainResult result;
  result.params = init_params(arch.plans, cfg.seed);
  if (cfg.max_epochs == 0) return result;

  const PooledPoints pooled = pool_points(train_data);
  const Matrix x = apply_scaler(scaler, pooled.inputs, ScaleDirection::forward, Channels::inputs);
  const Matrix y = apply_scaler(scaler, pooled.targets, ScaleDirection::forward, Channels::targets);
  const std::size_t n = x.rows();

  Matrix val_x, val_y;
  if (val_data != nullptr) {
    const PooledPoints v = pool_points(*val_data);
    val_x = apply_scaler(scaler, v.inputs, ScaleDirection::forward, Channels::inputs);
    val_y = apply_scaler(scaler, v.targets, ScaleDirection::forward, Channels::targets);
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, stream::shuffle));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  Workspace ws;
  Grads grads = Params::zeros_like(arch.plans);
  AdamState adam = AdamState::zeros_like(arch.plans);
  Matrix xb, yb;
  std::vector<double> losses;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_points) {
      const std::size_t end = std::min(n, begin + cfg.batch_points);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      gather_rows(x, rows, xb);
      gather_rows(y, rows, yb);
      DropoutMasks masks = draw_dropout_masks(arch, rows.size(), rng);
      const double loss = ws.loss_and_grad(result.params, arch, xb, yb, &masks, grads);
      if (!std::isfinite(loss)) throw TrainingError(epoch, "training loss diverged (non-finite)");
      try {
        adam_step(result.params, grads, adam, cfg.learning_rate, cfg.weight_decay);
      } catch (const ShapeError&) {
        throw;
      } catch (const Error& e) {
        throw TrainingError(epoch, e.what());
      }
      weighted += loss * static_cast<double>(rows.size());
    }

    EpochRecord rec;
    rec.train_loss = weighted / static_cast<double>(n);
    if (!std::isfinite(rec.train_loss)) throw TrainingError(epoch, "training loss diverged (non-finite)");
    if (val_data != nullptr)
      rec.val_loss = sum_squared_error(ws, result.params, arch, val_x, val_y) / static_cast<double>(val_y.size());
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);
    losses.push_back(rec.train_loss);

    if (cfg.early_stop_enabled && early_stop(losses, cfg.early_stop_threshold, cfg.early_stop_window)) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "epoch,train_loss,val_loss,wall_seconds\n";
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& r = history.epochs[e];
    out << (e + 1) << ',' << format_double(r.train_loss) << ','
        << (r.val_loss ? format_double(*r.val_loss) : std::string()) << ',' << format_double(r.wall_seconds) << '\n';
  }
  if (!out) throw Error("failed writing " + path);
}

namespace {

std::string describe(const GridPoint& p) {
  return std::string("dropout=") + (p.dropout ? "True" : "False") + " alpha=" + std::to_string(p.alpha) +
         " gamma=" + std::to_string(p.gamma) + " learning_rate=" + format_double(p.learning_rate);
}

}  // namespace

CVResult cross_validate(const Dataset& dataset, std::span<const GridPoint> grid, const PackedSpec& base,
                        const TrainConfig& cfg, const CVOptions& options) {
  if (grid.empty()) throw ConfigError("cross-validation grid is empty");
  cfg.validate();
  const std::size_t k = options.folds;
  const std::vector<Fold> folds = kfold_split(dataset, k, derive_seed(cfg.seed, stream::folds));
  std::vector<ScalerPair> scalers;
  for (const Fold& f : folds) scalers.push_back(fit_scaler(f.train));

  std::vector<PackedSpec> specs;
  for (const GridPoint& p : grid) {
    PackedSpec s = base;
    s.alpha = p.alpha;
    s.gamma = p.gamma;
    s.dropout_enabled = p.dropout;
    s.dropout_p = kDefaultDropout;
    try {
      s.validate();
    } catch (const Error& e) {
      throw ConfigError("grid row " + std::to_string(specs.size()) + " (" + describe(p) + "): " + e.what());
    }
    specs.push_back(std::move(s));
  }

  const std::size_t tasks = grid.size() * k;
  std::vector<double> losses(tasks, 0.0);
  std::vector<std::exception_ptr> errors(tasks);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t row = t / k;
      const std::size_t fold = t % k;
      try {
        TrainConfig fold_cfg = cfg;
        fold_cfg.learning_rate = grid[row].learning_rate;
        fold_cfg.seed = derive_seed(cfg.seed, stream::fold_base + fold);
        const TrainResult r = train(specs[row], folds[fold].train, nullptr, scalers[fold], fold_cfg);
        losses[t] = scaled_mse(r.params, make_architecture(specs[row]), folds[fold].validation, scalers[fold]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  for (std::size_t t = 0; t < tasks; ++t) {
    if (!errors[t]) continue;
    const std::string where = "grid row " + std::to_string(t / k) + " (" + describe(grid[t / k]) + "), fold " +
                              std::to_string(t % k);
    try {
      std::rethrow_exception(errors[t]);
    } catch (const TrainingError& e) {
      throw TrainingError(e.epoch(), where + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(where + ": " + e.what());
    }
  }

  CVResult result;
  for (std::size_t row = 0; row < grid.size(); ++row) {
    CVRow r;
    r.point = grid[row];
    r.fold_losses.assign(losses.begin() + static_cast<std::ptrdiff_t>(row * k),
                         losses.begin() + static_cast<std::ptrdiff_t>((row + 1) * k));
    double sum = 0.0;
    for (double l : r.fold_losses) sum += l;
    r.validation_loss = sum / static_cast<double>(k);
    result.rows.push_back(std::move(r));
  }
  return result;
}

std::string cv_results_csv(const CVResult& result) {
  std::string out = "dropout,alpha,gamma,learning_rate,validation_loss\n";
  for (const CVRow& r : result.rows) {
    out += r.point.dropout ? "True" : "False";
    out += ',' + std::to_string(r.point.alpha) + ',' + std::to_string(r.point.gamma) + ',' +
           format_double(r.point.learning_rate) + ',' + format_double(r.validation_loss) + '\n';
  }
  return out;
}

std::string cv_folds_csv(const CVResult& result) {
  std::string out = "row,fold,validation_loss\n";
  for (std::size_t row = 0; row < result.rows.size(); ++row)
    for (std::size_t f = 0; f < result.rows[row].fold_losses.size(); ++f)
      out += std::to_string(row) + ',' + std::to_string(f) + ',' + format_double(result.rows[row].fold_losses[f]) + '\n';
  return out;
}

}  // namespace packedflow
