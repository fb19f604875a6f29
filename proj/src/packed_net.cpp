#include "packedflow/packed_net.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "packedflow/error.hpp"

namespace packedflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using Block = Eigen::Map<RowMat, 0, Strided>;

ConstBlock group_view(const Matrix& m, std::size_t group, std::size_t width) {
  return ConstBlock(m.data() + group * width, static_cast<Eigen::Index>(m.rows()),
                    static_cast<Eigen::Index>(width), Strided(static_cast<Eigen::Index>(m.cols())));
}

Block group_view(Matrix& m, std::size_t group, std::size_t width) {
  return Block(m.data() + group * width, static_cast<Eigen::Index>(m.rows()),
               static_cast<Eigen::Index>(width), Strided(static_cast<Eigen::Index>(m.cols())));
}

Eigen::Map<const RowMat> weight_block(const LayerPlan& plan, const LayerParams& layer, std::size_t g) {
  const std::size_t block = plan.per_group_out * plan.per_group_in;
  return {layer.weights.data() + g * block, static_cast<Eigen::Index>(plan.per_group_out),
          static_cast<Eigen::Index>(plan.per_group_in)};
}

Eigen::Map<RowMat> weight_block(const LayerPlan& plan, LayerParams& layer, std::size_t g) {
  const std::size_t block = plan.per_group_out * plan.per_group_in;
  return {layer.weights.data() + g * block, static_cast<Eigen::Index>(plan.per_group_out),
          static_cast<Eigen::Index>(plan.per_group_in)};
}

std::size_t round_up(std::size_t value, std::size_t multiple) {
  return ((value + multiple - 1) / multiple) * multiple;
}

}  // namespace

void PackedSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid PackedSpec: " + what); };
  if (num_estimators < 1) fail("num_estimators must be >= 1");
  if (alpha < 1) fail("alpha must be >= 1");
  if (gamma < 1) fail("gamma must be >= 1");
  if (in_features < 1) fail("in_features must be >= 1");
  if (out_features < 1) fail("out_features must be >= 1");
  if (hidden_widths.empty()) fail("hidden_widths must be non-empty");
  for (std::size_t w : hidden_widths)
    if (w < 1) fail("hidden widths must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
}

std::string PackedSpec::label() const {
  std::ostringstream os;
  os << "PE(" << num_estimators << "," << alpha << "," << gamma << ")";
  return os.str();
}

const char* to_string(LayerRole role) {
  switch (role) {
    case LayerRole::first:
      return "first";
    case LayerRole::hidden:
      return "hidden";
    case LayerRole::last:
      return "last";
  }
  return "?";
}

std::size_t widened_width(std::size_t base_width, std::size_t num_estimators, std::size_t alpha,
                          std::size_t gamma) {
  const std::size_t unit = num_estimators * gamma;
  return std::max(unit, round_up(alpha * base_width, unit));
}

std::vector<LayerPlan> plan_layers(const PackedSpec& spec) {
  spec.validate();
  const std::size_t m = spec.num_estimators;
  const std::size_t interior_groups = m * spec.gamma;

  std::vector<std::size_t> widths;
  widths.reserve(spec.hidden_widths.size());
  for (std::size_t h : spec.hidden_widths) widths.push_back(widened_width(h, m, spec.alpha, spec.gamma));

  std::vector<LayerPlan> plans;
  plans.reserve(widths.size() + 1);
  plans.push_back({LayerRole::first, m * spec.in_features, widths.front(), m, spec.in_features,
                   widths.front() / m});
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    plans.push_back({LayerRole::hidden, widths[i], widths[i + 1], interior_groups,
                     widths[i] / interior_groups, widths[i + 1] / interior_groups});
  }
  plans.push_back({LayerRole::last, widths.back(), m * spec.out_features, m, widths.back() / m,
                   spec.out_features});
  return plans;
}

void Architecture::validate() const {
  if (plans.empty()) throw ShapeError(std::nullopt, "architecture has no layers");
  if (num_estimators < 1) throw ShapeError(std::nullopt, "num_estimators must be >= 1");
  for (std::size_t l = 0; l < plans.size(); ++l) {
    const LayerPlan& p = plans[l];
    if (p.groups == 0 || p.per_group_in == 0 || p.per_group_out == 0)
      throw ShapeError(l, "empty group dimensions");
    if (p.in_width != p.groups * p.per_group_in || p.out_width != p.groups * p.per_group_out)
      throw ShapeError(l, "widths are not groups x per-group widths");
    if (l > 0 && plans[l - 1].out_width != p.in_width)
      throw ShapeError(l, "input width does not match previous layer output");
  }
  if (plans.front().in_width != num_estimators * in_features)
    throw ShapeError(std::size_t{0}, "first layer must take the input replicated per estimator");
  if (plans.back().out_width != num_estimators * out_features)
    throw ShapeError(plans.size() - 1, "last layer must emit out_features per estimator");
  if (plans.back().groups % num_estimators != 0)
    throw ShapeError(plans.size() - 1, "last layer groups must split evenly across estimators");
}

Architecture make_architecture(const PackedSpec& spec) {
  Architecture arch;
  arch.plans = plan_layers(spec);
  arch.num_estimators = spec.num_estimators;
  arch.in_features = spec.in_features;
  arch.out_features = spec.out_features;
  arch.dropout_enabled = spec.dropout_enabled;
  arch.dropout_p = spec.dropout_p;
  return arch;
}

Params Params::zeros_like(std::span<const LayerPlan> plans) {
  Params p;
  p.layers.reserve(plans.size());
  for (const LayerPlan& plan : plans)
    p.layers.push_back({std::vector<double>(plan.weight_count(), 0.0), std::vector<double>(plan.out_width, 0.0)});
  return p;
}

void Params::fill(double value) {
  for (auto& layer : layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), value);
    std::fill(layer.biases.begin(), layer.biases.end(), value);
  }
}

bool Params::all_finite() const {
  for (const auto& layer : layers) {
    for (double w : layer.weights)
      if (!std::isfinite(w)) return false;
    for (double b : layer.biases)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

void Params::check_shapes(std::span<const LayerPlan> plans) const {
  if (layers.size() != plans.size())
    throw ShapeError(std::nullopt, "params have " + std::to_string(layers.size()) + " layers, plans have " +
                                       std::to_string(plans.size()));
  for (std::size_t l = 0; l < plans.size(); ++l) {
    if (layers[l].weights.size() != plans[l].weight_count())
      throw ShapeError(l, "weight count " + std::to_string(layers[l].weights.size()) + " != " +
                              std::to_string(plans[l].weight_count()));
    if (layers[l].biases.size() != plans[l].out_width)
      throw ShapeError(l, "bias count " + std::to_string(layers[l].biases.size()) + " != " +
                              std::to_string(plans[l].out_width));
  }
}

Params init_params(std::span<const LayerPlan> plans, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Params params = Params::zeros_like(plans);
  for (std::size_t l = 0; l < plans.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(plans[l].per_group_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : params.layers[l].weights) w = dist(rng);
  }
  return params;
}

std::size_t param_count(std::span<const LayerPlan> plans) {
  std::size_t total = 0;
  for (const LayerPlan& p : plans) total += p.weight_count() + p.out_width;
  return total;
}

std::size_t hidden_weight_count(std::span<const LayerPlan> plans) {
  std::size_t total = 0;
  for (const LayerPlan& p : plans)
    if (p.role == LayerRole::hidden) total += p.weight_count();
  return total;
}

DropoutMasks draw_dropout_masks(const Architecture& arch, std::size_t batch, std::mt19937_64& rng) {
  DropoutMasks out;
  if (!arch.dropout_enabled) return out;
  const double keep = 1.0 - arch.dropout_p;
  const double scale = 1.0 / keep;
  std::bernoulli_distribution kept(keep);
  for (std::size_t l = 0; l + 1 < arch.plans.size(); ++l) {
    Matrix mask(batch, arch.plans[l].out_width);
    for (double& v : mask.values()) v = kept(rng) ? scale : 0.0;
    out.masks.push_back(std::move(mask));
  }
  return out;
}

void grouped_affine(const LayerPlan& plan, const LayerParams& layer, const Matrix& in, Matrix& out) {
  out.resize(in.rows(), plan.out_width);
  for (std::size_t g = 0; g < plan.groups; ++g) {
    group_view(out, g, plan.per_group_out).noalias() =
        group_view(in, g, plan.per_group_in) * weight_block(plan, layer, g).transpose();
  }
  Eigen::Map<RowMat> y(out.data(), static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(out.cols()));
  Eigen::Map<const Eigen::RowVectorXd> b(layer.biases.data(), static_cast<Eigen::Index>(layer.biases.size()));
  y.rowwise() += b;
}

Matrix ensemble_mean(const Matrix& last_layer, std::size_t num_estimators, std::size_t out_features) {
  Matrix mean(last_layer.rows(), out_features);
  const double m = static_cast<double>(num_estimators);
  for (std::size_t b = 0; b < last_layer.rows(); ++b) {
    auto src = last_layer.row(b);
    auto dst = mean.row(b);
    for (std::size_t c = 0; c < out_features; ++c) {
      double sum = 0.0;
      for (std::size_t j = 0; j < num_estimators; ++j) sum += src[j * out_features + c];
      dst[c] = sum / m;
    }
  }
  return mean;
}

void Workspace::run_forward(const Params& params, const Architecture& arch, const Matrix& inputs,
                            const DropoutMasks* masks) {
  const auto& plans = arch.plans;
  params.check_shapes(plans);
  if (inputs.cols() != arch.in_features)
    throw ShapeError(std::size_t{0}, "input has " + std::to_string(inputs.cols()) + " channels, expected " +
                                         std::to_string(arch.in_features));
  const std::size_t batch = inputs.rows();
  const bool use_masks = masks != nullptr && !masks->masks.empty();
  if (use_masks) {
    if (masks->masks.size() + 1 != plans.size())
      throw ShapeError(std::nullopt, "dropout mask count does not match layer count");
    for (std::size_t l = 0; l < masks->masks.size(); ++l)
      if (masks->masks[l].rows() != batch || masks->masks[l].cols() != plans[l].out_width)
        throw ShapeError(l, "dropout mask shape mismatch");
  }

  const std::size_t m = arch.num_estimators;
  const std::size_t in = arch.in_features;
  replicated_.resize(batch, m * in);
  for (std::size_t b = 0; b < batch; ++b) {
    auto src = inputs.row(b);
    auto dst = replicated_.row(b);
    for (std::size_t j = 0; j < m; ++j) std::copy(src.begin(), src.end(), dst.begin() + j * in);
  }

  activations_.resize(plans.size());
  for (std::size_t l = 0; l < plans.size(); ++l) {
    const Matrix& prev = l == 0 ? replicated_ : activations_[l - 1];
    Matrix& out = activations_[l];
    grouped_affine(plans[l], params.layers[l], prev, out);
    if (l + 1 == plans.size()) break;
    auto& v = out.values();
    for (double& x : v) x = x > 0.0 ? x : 0.0;
    if (use_masks) {
      const auto& mask = masks->masks[l].values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
    }
  }
  mean_ = ensemble_mean(activations_.back(), m, arch.out_features);
}

const Matrix& Workspace::predict(const Params& params, const Architecture& arch, const Matrix& inputs) {
  run_forward(params, arch, inputs, nullptr);
  return mean_;
}

double Workspace::loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                                const Matrix& targets, const DropoutMasks* masks, Grads& grads) {
  if (inputs.rows() == 0) throw ShapeError(std::nullopt, "empty batch");
  if (targets.rows() != inputs.rows() || targets.cols() != arch.out_features)
    throw ShapeError(arch.plans.size() - 1, "targets must be batch x " + std::to_string(arch.out_features));
  grads.check_shapes(arch.plans);
  run_forward(params, arch, inputs, masks);

  const auto& plans = arch.plans;
  const std::size_t batch = inputs.rows();
  const std::size_t m = arch.num_estimators;
  const std::size_t c_out = arch.out_features;
  const double n = static_cast<double>(batch * c_out);

  double loss = 0.0;
  delta_.resize(batch, m * c_out);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < c_out; ++c) {
      const double r = mean_(b, c) - targets(b, c);
      loss += r * r;
      const double d = 2.0 * r / (n * static_cast<double>(m));
      for (std::size_t j = 0; j < m; ++j) delta_(b, j * c_out + c) = d;
    }
  }
  loss /= n;

  const bool use_masks = masks != nullptr && !masks->masks.empty();
  for (std::size_t l = plans.size(); l-- > 0;) {
    const LayerPlan& plan = plans[l];
    const Matrix& in = l == 0 ? replicated_ : activations_[l - 1];
    LayerParams& g = grads.layers[l];

    for (std::size_t k = 0; k < plan.groups; ++k) {
      weight_block(plan, g, k).noalias() =
          group_view(delta_, k, plan.per_group_out).transpose() * group_view(in, k, plan.per_group_in);
    }
    Eigen::Map<const RowMat> d(delta_.data(), static_cast<Eigen::Index>(batch),
                               static_cast<Eigen::Index>(plan.out_width));
    Eigen::Map<Eigen::RowVectorXd>(g.biases.data(), static_cast<Eigen::Index>(g.biases.size())) = d.colwise().sum();

    if (l == 0) break;
    delta_prev_.resize(batch, plan.in_width);
    for (std::size_t k = 0; k < plan.groups; ++k) {
      group_view(delta_prev_, k, plan.per_group_in).noalias() =
          group_view(delta_, k, plan.per_group_out) * weight_block(plan, params.layers[l], k);
    }
    // Back through dropout and ReLU of layer l-1. A stored activation > 0
    // implies both a positive pre-activation and a nonzero mask.
    auto& dp = delta_prev_.values();
    const auto& act = in.values();
    if (use_masks) {
      const auto& mask = masks->masks[l - 1].values();
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = act[i] > 0.0 ? dp[i] * mask[i] : 0.0;
    } else {
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = act[i] > 0.0 ? dp[i] : 0.0;
    }
    std::swap(delta_, delta_prev_);
  }
  return loss;
}

const Matrix& Workspace::forward(const Params& params, const Architecture& arch, const Matrix& inputs,
                                 const DropoutMasks* masks) {
  run_forward(params, arch, inputs, masks);
  return activations_.back();
}

PerEstimatorOutput forward(const Params& params, const Architecture& arch, const Matrix& batch,
                           const DropoutMasks& masks) {
  arch.validate();
  Workspace ws;
  const Matrix& last = ws.forward(params, arch, batch, &masks);
  const std::size_t c_out = arch.out_features;
  PerEstimatorOutput out;
  out.estimator_outputs.reserve(arch.num_estimators);
  for (std::size_t j = 0; j < arch.num_estimators; ++j) {
    Matrix est(batch.rows(), c_out);
    for (std::size_t b = 0; b < batch.rows(); ++b)
      for (std::size_t c = 0; c < c_out; ++c) est(b, c) = last(b, j * c_out + c);
    out.estimator_outputs.push_back(std::move(est));
  }
  out.mean_output = ws.mean_output();
  return out;
}

PerEstimatorOutput forward(const Params& params, const Architecture& arch, const Matrix& batch, Mode mode,
                           std::mt19937_64& rng) {
  DropoutMasks masks;
  if (mode == Mode::train) masks = draw_dropout_masks(arch, batch.rows(), rng);
  return forward(params, arch, batch, masks);
}

LossAndGrad loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                          const Matrix& targets, const DropoutMasks& masks) {
  arch.validate();
  Workspace ws;
  LossAndGrad out;
  out.grads = Params::zeros_like(arch.plans);
  out.loss = ws.loss_and_grad(params, arch, inputs, targets, &masks, out.grads);
  return out;
}

LossAndGrad loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                          const Matrix& targets, Mode mode, std::mt19937_64& rng) {
  DropoutMasks masks;
  if (mode == Mode::train) masks = draw_dropout_masks(arch, inputs.rows(), rng);
  return loss_and_grad(params, arch, inputs, targets, masks);
}

}  // namespace packedflow
