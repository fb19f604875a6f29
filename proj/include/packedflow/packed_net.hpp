#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "packedflow/matrix.hpp"

namespace packedflow {

inline constexpr std::size_t kInputFeatures = 7;
inline constexpr std::size_t kOutputFeatures = 4;
inline constexpr double kDefaultDropout = 0.2;

// Packed-Ensemble architecture: M estimators, width multiplier alpha, and gamma
// groups inside every hidden layer of each estimator.
struct PackedSpec {
  std::size_t num_estimators = 1;
  std::size_t alpha = 1;
  std::size_t gamma = 1;
  std::size_t in_features = kInputFeatures;
  std::size_t out_features = kOutputFeatures;
  std::vector<std::size_t> hidden_widths;
  bool dropout_enabled = false;
  double dropout_p = kDefaultDropout;

  // Throws ConfigError on a violated invariant.
  void validate() const;
  // "PE(M,alpha,gamma)".
  std::string label() const;

  friend bool operator==(const PackedSpec&, const PackedSpec&) = default;
};

enum class LayerRole : std::uint8_t { first = 0, hidden = 1, last = 2 };

const char* to_string(LayerRole role);

struct LayerPlan {
  LayerRole role = LayerRole::hidden;
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  std::size_t groups = 1;
  std::size_t per_group_in = 0;
  std::size_t per_group_out = 0;

  std::size_t weight_count() const { return groups * per_group_out * per_group_in; }

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

// Smallest multiple of num_estimators*gamma that is >= alpha*base_width.
std::size_t widened_width(std::size_t base_width, std::size_t num_estimators, std::size_t alpha,
                          std::size_t gamma);

std::vector<LayerPlan> plan_layers(const PackedSpec& spec);

// Everything forward/backward needs to know about the network besides its
// weights. Built from a spec, or directly from hand-made plans in tests.
struct Architecture {
  std::vector<LayerPlan> plans;
  std::size_t num_estimators = 1;
  std::size_t in_features = kInputFeatures;
  std::size_t out_features = kOutputFeatures;
  bool dropout_enabled = false;
  double dropout_p = kDefaultDropout;

  // Checks that plans chain and that the first/last layers match the
  // replicated input and per-estimator output. Throws ShapeError.
  void validate() const;
};

Architecture make_architecture(const PackedSpec& spec);

// Weights of one grouped layer, stored as groups blocks of
// per_group_out x per_group_in (row-major). Block g maps input channels
// [g*per_group_in, (g+1)*per_group_in) to output channels
// [g*per_group_out, (g+1)*per_group_out).
struct LayerParams {
  std::vector<double> weights;
  std::vector<double> biases;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Params {
  std::vector<LayerParams> layers;

  // Zero-filled parameters shaped after plans.
  static Params zeros_like(std::span<const LayerPlan> plans);
  void fill(double value);
  bool all_finite() const;
  // Throws ShapeError naming the first mismatching layer.
  void check_shapes(std::span<const LayerPlan> plans) const;

  friend bool operator==(const Params&, const Params&) = default;
};

using Grads = Params;

// He-style uniform init with bound sqrt(6 / per_group_in); zero biases.
Params init_params(std::span<const LayerPlan> plans, std::uint64_t seed);

std::size_t param_count(std::span<const LayerPlan> plans);
// Weights of hidden->hidden layers only (excludes first and last layers).
std::size_t hidden_weight_count(std::span<const LayerPlan> plans);

enum class Mode { train, eval };

struct PerEstimatorOutput {
  // estimator_outputs[j] is batch x out_features.
  std::vector<Matrix> estimator_outputs;
  Matrix mean_output;
};

// Inverted-dropout scale factors (0 or 1/(1-p)) applied after the activation
// of every non-last layer. Empty when dropout is off.
struct DropoutMasks {
  std::vector<Matrix> masks;
};

DropoutMasks draw_dropout_masks(const Architecture& arch, std::size_t batch, std::mt19937_64& rng);

// Applies one grouped affine map: out = in * blockdiag(W)^T + b, with no
// activation. in is batch x plan.in_width.
void grouped_affine(const LayerPlan& plan, const LayerParams& layer, const Matrix& in, Matrix& out);

PerEstimatorOutput forward(const Params& params, const Architecture& arch, const Matrix& batch,
                           Mode mode, std::mt19937_64& rng);
PerEstimatorOutput forward(const Params& params, const Architecture& arch, const Matrix& batch,
                           const DropoutMasks& masks);

struct LossAndGrad {
  double loss = 0.0;
  Grads grads;
};

// MSE of the ensemble mean against targets, averaged over batch and channels,
// and its exact gradient.
LossAndGrad loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                          const Matrix& targets, Mode mode, std::mt19937_64& rng);
LossAndGrad loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                          const Matrix& targets, const DropoutMasks& masks);

// Reusable scratch buffers for repeated forward/backward passes (training
// loop). Not thread-safe; one per trainer.
class Workspace {
 public:
  // Returns the loss; gradients are written to grads, which must already be
  // shaped like params.
  double loss_and_grad(const Params& params, const Architecture& arch, const Matrix& inputs,
                       const Matrix& targets, const DropoutMasks* masks, Grads& grads);
  // Runs a forward pass and returns the last layer output, batch x
  // (M*out_features). The ensemble mean is then available via mean_output().
  const Matrix& forward(const Params& params, const Architecture& arch, const Matrix& inputs,
                        const DropoutMasks* masks);
  const Matrix& mean_output() const { return mean_; }
  // Ensemble-mean prediction in eval mode.
  const Matrix& predict(const Params& params, const Architecture& arch, const Matrix& inputs);

 private:
  void run_forward(const Params& params, const Architecture& arch, const Matrix& inputs,
                   const DropoutMasks* masks);

  Matrix replicated_;
  std::vector<Matrix> activations_;  // post-activation (and post-dropout) outputs
  Matrix mean_;
  Matrix delta_;
  Matrix delta_prev_;
};

// Mean over estimators, column-wise, of a batch x (M*out_features) matrix.
Matrix ensemble_mean(const Matrix& last_layer, std::size_t num_estimators, std::size_t out_features);

}  // namespace packedflow
