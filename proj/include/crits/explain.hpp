#pragma once

// Exact local explanations. A forward trace fixes the max-pool winners and
// ReLU patterns; inside that region the network is affine in the input, and
// the surrogate z = sum(w * x) + b reproduces the logit exactly.
//
// Also hosts the gradient baselines (vanilla gradient, SmoothGrad and
// expected-gradients style GradientSHAP), all differentiating the logit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crits/core.hpp"
#include "crits/model.hpp"
#include "crits/train.hpp"

namespace crits {

/// Affine map from the pooled vector to the logit: z = w_K . pooled + b_K.
struct PoolWeights {
  std::vector<double> weights;
  double bias = 0.0;
};

struct LinearSurrogate {
  Series weights;
  double bias = 0.0;
  /// weights * x, element-wise.
  Series relevance;
  ForwardTrace trace;

  /// sum(weights * x) + bias.
  double evaluate(const Series& x) const {
    if (!x.same_shape(weights)) throw Error(Errc::ShapeMismatch, "input shape differs from surrogate");
    double z = bias;
    for (std::size_t i = 0; i < x.size(); ++i) z += weights.values()[i] * x.values()[i];
    return z;
  }
};

namespace detail {
inline void check_trace(const CritsModel& model, const ForwardTrace& trace) {
  const Parameters& p = model.params;
  if (trace.winners.size() != model.config.kernel_count || trace.pooled.size() != model.config.kernel_count) {
    throw Error(Errc::TraceMismatch, "trace filter count differs from model");
  }
  if (trace.patterns.size() != p.hidden.size()) throw Error(Errc::TraceMismatch, "trace layer count differs from model");
  for (std::size_t l = 0; l < p.hidden.size(); ++l) {
    if (trace.patterns[l].size() != p.hidden[l].outputs) {
      throw Error(Errc::TraceMismatch, "pattern of layer " + std::to_string(l) + " has wrong width");
    }
  }
  for (std::size_t w : trace.winners) {
    if (w >= model.config.positions()) throw Error(Errc::TraceMismatch, "winner index outside the feature map");
  }
}
}  // namespace detail

/// Composes the affine pieces selected by the activation patterns, first
/// layer to last: A <- P_l W_l A, c <- P_l (W_l c + b_l), then
/// w_K = out_weights . A and b_K = out_weights . c + out_bias.
inline PoolWeights unwrap_rn(const CritsModel& model, const ForwardTrace& trace) {
  detail::check_trace(model, trace);
  const Parameters& p = model.params;
  const std::size_t K = model.config.kernel_count;

  // A: rows = current layer width, cols = K. Starts as the K x K identity.
  std::size_t rows = K;
  std::vector<double> A(K * K, 0.0);
  for (std::size_t k = 0; k < K; ++k) A[k * K + k] = 1.0;
  std::vector<double> offset(K, 0.0);

  for (std::size_t l = 0; l < p.hidden.size(); ++l) {
    const DenseLayer& layer = p.hidden[l];
    const auto& pattern = trace.patterns[l];
    std::vector<double> next(layer.outputs * K, 0.0);
    std::vector<double> next_offset(layer.outputs, 0.0);
    for (std::size_t j = 0; j < layer.outputs; ++j) {
      if (!pattern[j]) continue;
      double* row = &next[j * K];
      double off = layer.bias[j];
      for (std::size_t i = 0; i < rows; ++i) {
        const double w = layer.weight(j, i);
        if (w == 0.0) continue;
        const double* src = &A[i * K];
        for (std::size_t k = 0; k < K; ++k) row[k] += w * src[k];
        off += w * offset[i];
      }
      next_offset[j] = off;
    }
    A = std::move(next);
    offset = std::move(next_offset);
    rows = layer.outputs;
  }

  PoolWeights pw{std::vector<double>(K, 0.0), p.out_bias};
  for (std::size_t i = 0; i < rows; ++i) {
    const double w = p.out_weights[i];
    for (std::size_t k = 0; k < K; ++k) pw.weights[k] += w * A[i * K + k];
    pw.bias += w * offset[i];
  }
  return pw;
}

/// Projects each filter's kernel onto its winning input window, weighted by
/// the unwrapped pool weight. Conv biases fold into the surrogate bias:
/// b = b_K + sum_k w_K[k] * beta_k.
inline LinearSurrogate deconvolve(const CritsModel& model, const ForwardTrace& trace, const PoolWeights& pw,
                                  const Series& x) {
  detail::check_trace(model, trace);
  const ModelConfig& cfg = model.config;
  if (pw.weights.size() != cfg.kernel_count) throw Error(Errc::TraceMismatch, "pool weight count differs from K");
  if (x.channels() != cfg.channels || x.length() != cfg.length) throw Error(Errc::ShapeMismatch, "input shape");

  LinearSurrogate s;
  s.weights = Series(cfg.channels, cfg.length);
  s.bias = pw.bias;
  for (std::size_t k = 0; k < cfg.kernel_count; ++k) {
    const double wk = pw.weights[k];
    s.bias += wk * model.params.conv_bias[k];
    if (wk == 0.0) continue;
    const std::size_t t0 = trace.winners[k];
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      for (std::size_t tau = 0; tau < cfg.kernel_len; ++tau) s.weights(c, t0 + tau) += wk * model.kernel(k, c, tau);
    }
  }
  s.relevance = Series(cfg.channels, cfg.length);
  for (std::size_t i = 0; i < x.size(); ++i) s.relevance.values()[i] = s.weights.values()[i] * x.values()[i];
  s.trace = trace;
  return s;
}

inline LinearSurrogate explain_intrinsic(const CritsModel& model, const Series& x) {
  const ForwardTrace trace = forward(model, x);
  return deconvolve(model, trace, unwrap_rn(model, trace), x);
}

/// Gradient of the logit with respect to the input.
inline SaliencyMap grad_explain(const CritsModel& model, const Series& x) {
  const ForwardTrace trace = forward(model, x);
  SaliencyMap g(x.channels(), x.length());
  backpropagate(model, x, trace, 1.0, nullptr, &g);
  return g;
}

/// Mean input gradient over n Gaussian-noised copies of x.
inline SaliencyMap smoothgrad(const CritsModel& model, const Series& x, double noise_std, std::size_t n,
                              std::uint64_t seed) {
  if (n < 1) throw Error(Errc::BadParams, "smoothgrad needs n >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw Error(Errc::BadParams, "noise std must be >= 0");
  // Every noisy copy equals x, so the mean is the plain gradient.
  if (noise_std == 0.0) return grad_explain(model, x);

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  SaliencyMap acc(x.channels(), x.length());
  Series xn = x;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < x.size(); ++i) xn.values()[i] = x.values()[i] + noise(rng);
    const ForwardTrace trace = forward(model, xn);
    backpropagate(model, xn, trace, 1.0, nullptr, &acc);
  }
  for (double& v : acc.values()) v /= static_cast<double>(n);
  return acc;
}

/// Expected-gradients estimate: mean over n draws of (x - b) * grad z(a x + (1 - a) b)
/// with b uniform over `baselines` and a uniform in [0, 1].
inline SaliencyMap gradient_shap(const CritsModel& model, const Series& x, std::span<const Series> baselines,
                                 std::size_t n, std::uint64_t seed) {
  if (baselines.empty()) throw Error(Errc::BadParams, "gradient_shap needs at least one baseline");
  if (n < 1) throw Error(Errc::BadParams, "gradient_shap needs n >= 1");
  for (const Series& b : baselines) {
    if (!b.same_shape(x)) throw Error(Errc::BadParams, "baseline shape differs from input");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, baselines.size() - 1);
  std::uniform_real_distribution<double> alpha_dist(0.0, 1.0);

  SaliencyMap acc(x.channels(), x.length());
  Series point = x;
  for (std::size_t s = 0; s < n; ++s) {
    const Series& b = baselines[pick(rng)];
    const double a = alpha_dist(rng);
    for (std::size_t i = 0; i < x.size(); ++i) point.values()[i] = a * x.values()[i] + (1.0 - a) * b.values()[i];
    SaliencyMap g(x.channels(), x.length());
    backpropagate(model, point, forward(model, point), 1.0, nullptr, &g);
    for (std::size_t i = 0; i < x.size(); ++i) acc.values()[i] += (x.values()[i] - b.values()[i]) * g.values()[i];
  }
  for (double& v : acc.values()) v /= static_cast<double>(n);
  return acc;
}

// ---------------------------------------------------------------------------
// Uniform explainer interface used by the evaluation harness and the CLI.

struct Explainer {
  std::string name;
  /// The explanation itself: used for input-sensitivity and sparsity.
  std::function<SaliencyMap(const CritsModel&, const Series&, std::uint64_t seed)> explain;
  /// When true, cells are ranked by |map * x| (weight-style map); otherwise by |map|.
  bool rank_by_weight_times_input = false;

  SaliencyMap relevance(const SaliencyMap& map, const Series& x) const {
    if (!rank_by_weight_times_input) return map;
    SaliencyMap r = map;
    for (std::size_t i = 0; i < r.size(); ++i) r.values()[i] *= x.values()[i];
    return r;
  }
};

inline Explainer intrinsic_explainer() {
  return {"intrinsic", [](const CritsModel& m, const Series& x, std::uint64_t) { return explain_intrinsic(m, x).weights; },
          true};
}

inline Explainer gradient_explainer() {
  return {"gradient", [](const CritsModel& m, const Series& x, std::uint64_t) { return grad_explain(m, x); }, false};
}

inline Explainer smoothgrad_explainer(double noise_std = 0.1, std::size_t n = 32) {
  return {"smoothgrad",
          [noise_std, n](const CritsModel& m, const Series& x, std::uint64_t seed) {
            return smoothgrad(m, x, noise_std, n, seed);
          },
          false};
}

inline Explainer gradient_shap_explainer(std::vector<Series> baselines, std::size_t n = 32) {
  return {"gradshap",
          [baselines = std::move(baselines), n](const CritsModel& m, const Series& x, std::uint64_t seed) {
            return gradient_shap(m, x, baselines, n, seed);
          },
          false};
}

/// Control: every cell equally relevant, so ranking falls back to cell order.
inline Explainer uniform_explainer() {
  return {"uniform",
          [](const CritsModel&, const Series& x, std::uint64_t) { return SaliencyMap(x.channels(), x.length(), 1.0); },
          false};
}

/// Control: i.i.d. U(0, 1) relevance drawn from the explainer seed, so the
/// selected cells carry no information about the model.
inline Explainer random_explainer() {
  return {"random",
          [](const CritsModel&, const Series& x, std::uint64_t seed) {
            Rng rng(seed);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            SaliencyMap m(x.channels(), x.length());
            for (double& v : m.values()) v = u(rng);
            return m;
          },
          false};
}

/// One row per channel, T comma-separated values per row.
inline std::string saliency_to_csv(const SaliencyMap& map) {
  std::string s;
  for (std::size_t c = 0; c < map.channels(); ++c) {
    for (std::size_t t = 0; t < map.length(); ++t) {
      if (t) s += ',';
      s += format_double(map(c, t));
    }
    s += '\n';
  }
  return s;
}

inline SaliencyMap saliency_from_csv(std::string_view text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto row = detail::parse_reals(line, line_no, 0);
    if (rows == 0) cols = row.size();
    if (row.size() != cols) throw Error(Errc::ShapeMismatch, "ragged saliency CSV at line " + std::to_string(line_no));
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  return SaliencyMap(rows, cols, std::move(values));
}

}  // namespace crits
