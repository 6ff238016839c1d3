#pragma once

// Test-only helpers: hand-built networks, random models/inputs and a naive
// reference forward pass that shares no code with crits::forward.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "crits/model.hpp"

namespace crits::testing {

/// K=1, h=2, kernel [1, -1], one hidden unit with weight 2, output weight 1,
/// output bias 0.5, input shape 1 x 4.
inline CritsModel hand_net() {
  CritsModel m;
  m.config = ModelConfig{2, 1, {1}, 1, 4, 0};
  m.params.kernels = {1.0, -1.0};
  m.params.conv_bias = {0.0};
  m.params.hidden = {DenseLayer{1, 1, {2.0}, {0.0}}};
  m.params.out_weights = {1.0};
  m.params.out_bias = 0.5;
  m.norm = NormStats{{0.0}, {1.0}};
  return m;
}

inline Series hand_input() { return Series(1, 4, {0.0, 1.0, 3.0, 2.0}); }

/// Random model with non-zero biases everywhere so that tests exercise them.
inline CritsModel random_model(std::mt19937_64& rng, std::size_t m, std::size_t T, std::size_t h, std::size_t K,
                               std::vector<std::size_t> hidden) {
  ModelConfig cfg{h, K, std::move(hidden), m, T, rng()};
  CritsModel model = init_model(cfg);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& b : model.params.conv_bias) b = n(rng);
  for (DenseLayer& l : model.params.hidden) for (double& b : l.bias) b = n(rng) + 0.1;
  model.params.out_bias = n(rng);
  return model;
}

inline Series random_series(std::mt19937_64& rng, std::size_t m, std::size_t T, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Series x(m, T);
  for (double& v : x.values()) v = n(rng);
  return x;
}

struct NaiveResult {
  double logit;
  std::vector<std::size_t> winners;
};

/// Direct transcription of the architecture with explicit loops and vectors of
/// vectors; used only as an oracle.
inline NaiveResult naive_forward(const CritsModel& model, const Series& x) {
  const auto& c = model.config;
  const std::size_t P = c.length - c.kernel_len + 1;
  std::vector<double> pooled(c.kernel_count);
  std::vector<std::size_t> winners(c.kernel_count);
  for (std::size_t k = 0; k < c.kernel_count; ++k) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < P; ++t) {
      double f = model.params.conv_bias[k];
      for (std::size_t tau = 0; tau < c.kernel_len; ++tau) {
        for (std::size_t ch = 0; ch < c.channels; ++ch) f += model.kernel(k, ch, tau) * x(ch, t + tau);
      }
      if (f > best) {
        best = f;
        winners[k] = t;
      }
    }
    pooled[k] = best;
  }
  std::vector<double> a = pooled;
  for (const DenseLayer& l : model.params.hidden) {
    std::vector<double> next(l.outputs);
    for (std::size_t j = 0; j < l.outputs; ++j) {
      double s = l.bias[j];
      for (std::size_t i = 0; i < l.inputs; ++i) s += l.weight(j, i) * a[i];
      next[j] = std::max(0.0, s);
    }
    a = next;
  }
  double z = model.params.out_bias;
  for (std::size_t i = 0; i < a.size(); ++i) z += model.params.out_weights[i] * a[i];
  return {z, winners};
}

/// True when a pooling tie or an exactly-zero pre-activation makes the
/// gradient one-sided.
inline bool degenerate(const ForwardTrace& tr) {
  for (std::size_t k = 0; k < tr.kernel_count; ++k) {
    for (std::size_t t = 0; t < tr.positions; ++t) {
      if (t != tr.winners[k] && tr.feature(t, k) == tr.pooled[k]) return true;
    }
  }
  for (const auto& layer : tr.pre_activations) {
    for (double v : layer) {
      if (v == 0.0) return true;
    }
  }
  return false;
}

inline std::vector<double> vals(const Series& s) { return {s.values().begin(), s.values().end()}; }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace crits::testing
