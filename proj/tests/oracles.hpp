#pragma once

// Reference implementations used only by tests. They share no code with the
// library's grouped kernels: plain loops over explicit dense matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "packedflow/matrix.hpp"
#include "packedflow/packed_net.hpp"

namespace oracle {

using packedflow::LayerParams;
using packedflow::LayerPlan;
using packedflow::Matrix;
using packedflow::Params;

// Explicit out_width x in_width matrix with the group blocks on the diagonal.
inline Matrix materialize(const LayerPlan& plan, const LayerParams& layer) {
  Matrix dense(plan.out_width, plan.in_width, 0.0);
  for (std::size_t g = 0; g < plan.groups; ++g)
    for (std::size_t o = 0; o < plan.per_group_out; ++o)
      for (std::size_t i = 0; i < plan.per_group_in; ++i)
        dense(g * plan.per_group_out + o, g * plan.per_group_in + i) =
            layer.weights[(g * plan.per_group_out + o) * plan.per_group_in + i];
  return dense;
}

// y = x W^T + b with W dense.
inline Matrix dense_affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
  Matrix y(x.rows(), w.rows());
  for (std::size_t n = 0; n < x.rows(); ++n)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < w.cols(); ++i) s += w(o, i) * x(n, i);
      y(n, o) = s;
    }
  return y;
}

// Dense ReLU MLP with separate weight matrices. Layers are out x in.
struct DenseMlp {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  Matrix forward(const Matrix& x) const {
    Matrix a = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      a = dense_affine(a, weights[l], biases[l]);
      if (l + 1 < weights.size())
        for (double& v : a.values()) v = std::max(v, 0.0);
    }
    return a;
  }

  double loss(const Matrix& x, const Matrix& t) const {
    const Matrix y = forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y.values()[i] - t.values()[i]) * (y.values()[i] - t.values()[i]);
    return s / static_cast<double>(y.size());
  }

  // Textbook backprop, one sample at a time.
  void gradients(const Matrix& x, const Matrix& t, std::vector<Matrix>& gw, std::vector<std::vector<double>>& gb) const {
    const std::size_t L = weights.size();
    gw.clear();
    gb.clear();
    for (std::size_t l = 0; l < L; ++l) {
      gw.emplace_back(weights[l].rows(), weights[l].cols(), 0.0);
      gb.emplace_back(weights[l].rows(), 0.0);
    }
    const double scale = 2.0 / static_cast<double>(x.rows() * t.cols());
    for (std::size_t n = 0; n < x.rows(); ++n) {
      std::vector<std::vector<double>> acts{std::vector<double>(x.row(n).begin(), x.row(n).end())};
      for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> z(weights[l].rows());
        for (std::size_t o = 0; o < z.size(); ++o) {
          double s = biases[l][o];
          for (std::size_t i = 0; i < weights[l].cols(); ++i) s += weights[l](o, i) * acts.back()[i];
          z[o] = (l + 1 < L) ? std::max(s, 0.0) : s;
        }
        acts.push_back(z);
      }
      std::vector<double> delta(acts.back().size());
      for (std::size_t c = 0; c < delta.size(); ++c) delta[c] = scale * (acts.back()[c] - t(n, c));
      for (std::size_t l = L; l-- > 0;) {
        const auto& in = acts[l];
        for (std::size_t o = 0; o < delta.size(); ++o) {
          gb[l][o] += delta[o];
          for (std::size_t i = 0; i < in.size(); ++i) gw[l](o, i) += delta[o] * in[i];
        }
        if (l == 0) break;
        std::vector<double> prev(in.size(), 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
          for (std::size_t o = 0; o < delta.size(); ++o) prev[i] += weights[l](o, i) * delta[o];
          if (in[i] <= 0.0) prev[i] = 0.0;
        }
        delta = std::move(prev);
      }
    }
  }
};

// Dense network equivalent to a PE(1,1,1) parameter set.
inline DenseMlp from_params(std::span<const LayerPlan> plans, const Params& p) {
  DenseMlp m;
  for (std::size_t l = 0; l < plans.size(); ++l) {
    m.weights.push_back(materialize(plans[l], p.layers[l]));
    m.biases.push_back(p.layers[l].biases);
  }
  return m;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = d(rng);
  return m;
}

// Central difference of f with respect to *x.
inline double central_difference(double* x, double step, const std::function<double()>& f) {
  const double saved = *x;
  *x = saved + step;
  const double up = f();
  *x = saved - step;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * step);
}

// Signs of every hidden pre-activation of a packed network for input x
// (batch x in_features), computed group by group with plain loops. masks, if
// not empty, scale each post-activation.
inline std::vector<char> relu_pattern(std::span<const LayerPlan> plans, const Params& p, const Matrix& x,
                                      std::size_t num_estimators, std::span<const Matrix> masks) {
  std::vector<char> pattern;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    std::vector<double> a;
    for (std::size_t j = 0; j < num_estimators; ++j) a.insert(a.end(), x.row(n).begin(), x.row(n).end());
    for (std::size_t l = 0; l + 1 < plans.size(); ++l) {
      const LayerPlan& pl = plans[l];
      std::vector<double> z(pl.out_width);
      for (std::size_t g = 0; g < pl.groups; ++g)
        for (std::size_t o = 0; o < pl.per_group_out; ++o) {
          const std::size_t row = g * pl.per_group_out + o;
          double s = p.layers[l].biases[row];
          for (std::size_t i = 0; i < pl.per_group_in; ++i)
            s += p.layers[l].weights[row * pl.per_group_in + i] * a[g * pl.per_group_in + i];
          z[row] = s;
        }
      for (std::size_t o = 0; o < z.size(); ++o) {
        pattern.push_back(z[o] > 0.0);
        z[o] = std::max(z[o], 0.0);
        if (!masks.empty()) z[o] *= masks[l](n, o);
      }
      a = std::move(z);
    }
  }
  return pattern;
}

struct GradientCheck {
  double worst_relative_error = 0.0;
  bool kink_crossed = false;  // some step changed the ReLU pattern; differences are then not valid
};

// Compares analytic gradients against central differences with the given
// step on every parameter. loss(p) evaluates the loss at p; grad is the
// analytic gradient at p. Relative error uses a 1e-7 floor.
inline GradientCheck gradient_check(std::span<const LayerPlan> plans, std::size_t num_estimators, Params p,
                                    const Params& grad, const Matrix& x, std::span<const Matrix> masks, double step,
                                    const std::function<double(const Params&)>& loss) {
  GradientCheck out;
  const auto base = relu_pattern(plans, p, x, num_estimators, masks);
  auto visit = [&](double& value, double analytic) {
    const double saved = value;
    value = saved + step;
    const double up = loss(p);
    out.kink_crossed |= relu_pattern(plans, p, x, num_estimators, masks) != base;
    value = saved - step;
    const double down = loss(p);
    out.kink_crossed |= relu_pattern(plans, p, x, num_estimators, masks) != base;
    value = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    out.worst_relative_error = std::max(out.worst_relative_error, err);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].weights.size(); ++i) visit(p.layers[l].weights[i], grad.layers[l].weights[i]);
    for (std::size_t i = 0; i < p.layers[l].biases.size(); ++i) visit(p.layers[l].biases[i], grad.layers[l].biases[i]);
  }
  return out;
}

// Spearman by counting: rank_i = #{x_j < x_i} + (#{x_j == x_i} + 1) / 2, then
// Pearson with explicit means. O(n^2).
inline std::vector<double> counting_ranks(std::span<const double> x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double v : x) {
      if (v < x[i]) less += 1.0;
      if (v == x[i]) equal += 1.0;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = counting_ranks(x);
  const auto ry = counting_ranks(y);
  return pearson(rx, ry);
}

}  // namespace oracle
