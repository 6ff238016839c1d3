#pragma once

// Training: binary cross-entropy on the logit, hand-written backpropagation
// through the max-pool winners and ReLU patterns, Adam, the finite-difference
// gradient harness and random hyperparameter search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "crits/core.hpp"
#include "crits/data.hpp"
#include "crits/model.hpp"

namespace crits {

/// log(1 + e^v) without overflow.
inline double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

/// Binary cross-entropy given the logit z.
inline double bce_with_logit(double z, int y) { return y == 1 ? softplus(-z) : softplus(z); }

/// Binary cross-entropy given a probability in (0, 1); evaluated through the logit.
inline double bce_loss(double p, int y) {
  if (!(p > 0.0 && p < 1.0)) throw Error(Errc::BadParams, "probability must lie in (0, 1)");
  return bce_with_logit(std::log(p) - std::log1p(-p), y);
}

/// Propagates dL/dz = `dz` back through the network described by `trace`.
/// Either output may be null. Gradients accumulate (+=) into `grads`; the input
/// gradient accumulates into `input_grad`. Max-pool routes each filter's
/// gradient only to its recorded winner; a unit with pre-activation exactly 0
/// is treated as inactive.
inline void backpropagate(const CritsModel& model, const Series& x, const ForwardTrace& trace, double dz,
                          Gradients* grads, Series* input_grad) {
  const ModelConfig& cfg = model.config;
  const Parameters& prm = model.params;
  const std::size_t L = prm.hidden.size();

  if (grads) {
    const std::vector<double>& last = trace.activations.back();
    for (std::size_t i = 0; i < last.size(); ++i) grads->out_weights[i] += dz * last[i];
    grads->out_bias += dz;
  }

  std::vector<double> delta(prm.out_weights.size());
  for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = trace.patterns[L - 1][j] ? dz * prm.out_weights[j] : 0.0;

  for (std::size_t l = L; l-- > 0;) {
    const DenseLayer& layer = prm.hidden[l];
    const std::vector<double>& in = l == 0 ? trace.pooled : trace.activations[l - 1];
    if (grads) {
      DenseLayer& g = grads->hidden[l];
      for (std::size_t j = 0; j < layer.outputs; ++j) {
        if (delta[j] == 0.0) continue;
        g.bias[j] += delta[j];
        double* gw = &g.weights[j * layer.inputs];
        for (std::size_t i = 0; i < layer.inputs; ++i) gw[i] += delta[j] * in[i];
      }
    }
    std::vector<double> below(layer.inputs, 0.0);
    for (std::size_t j = 0; j < layer.outputs; ++j) {
      if (delta[j] == 0.0) continue;
      const double* w = &layer.weights[j * layer.inputs];
      for (std::size_t i = 0; i < layer.inputs; ++i) below[i] += delta[j] * w[i];
    }
    if (l > 0) {
      for (std::size_t i = 0; i < below.size(); ++i) if (!trace.patterns[l - 1][i]) below[i] = 0.0;
    }
    delta = std::move(below);
  }

  // delta is now dL/d(pooled).
  const std::size_t h = cfg.kernel_len;
  for (std::size_t k = 0; k < cfg.kernel_count; ++k) {
    const double g = delta[k];
    if (g == 0.0) continue;
    const std::size_t t0 = trace.winners[k];
    if (grads) grads->conv_bias[k] += g;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const std::size_t base = (k * cfg.channels + c) * h;
      for (std::size_t tau = 0; tau < h; ++tau) {
        if (grads) grads->kernels[base + tau] += g * x(c, t0 + tau);
        if (input_grad) (*input_grad)(c, t0 + tau) += g * prm.kernels[base + tau];
      }
    }
  }
}

/// Exact gradient of bce_with_logit(forward(model, x).logit, y) w.r.t. every parameter.
inline Gradients backward(const CritsModel& model, const Series& x, int y) {
  const ForwardTrace trace = forward(model, x);
  Gradients g = model.params.zeros_like();
  backpropagate(model, x, trace, trace.probability - static_cast<double>(y), &g, nullptr);
  return g;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  /// Epochs without test-loss improvement before stopping; 0 disables.
  std::size_t patience = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(Errc::BadConfig, "learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(Errc::BadConfig, "Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw Error(Errc::BadConfig, "Adam epsilon must be > 0");
    if (batch_size < 1) throw Error(Errc::BadConfig, "batch size must be >= 1");
  }
};

struct AdamState {
  Parameters first;
  Parameters second;

  static AdamState for_params(const Parameters& p) { return {p.zeros_like(), p.zeros_like()}; }
};

/// One bias-corrected Adam update at step t >= 1, in place.
inline void adam_step(Parameters& params, const Gradients& grads, AdamState& state, const TrainConfig& cfg,
                      std::size_t t) {
  if (t < 1) throw Error(Errc::BadParams, "Adam step index starts at 1");
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first.tensors();
  auto v = state.second.tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw Error(Errc::ShapeMismatch, "gradient / state tensors do not mirror the parameters");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != g[i].size()) throw Error(Errc::ShapeMismatch, "gradient tensor size mismatch");
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * g[i][j];
      v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * g[i][j] * g[i][j];
      const double mhat = m[i][j] / c1;
      const double vhat = v[i][j] / c2;
      p[i][j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

/// F1 of class 1. Degenerate cases (no true and no predicted positives, or
/// no true positives) score 0.
inline double f1_score(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw Error(Errc::ShapeMismatch, "label / prediction length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == 1 && labels[i] == 1) ++tp;
    else if (predictions[i] == 1) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

struct DatasetScore {
  double loss = 0.0;
  double f1 = 0.0;
};

inline DatasetScore score(const CritsModel& model, const TimeSeriesDataset& ds) {
  std::vector<int> preds(ds.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ForwardTrace tr = forward(model, ds.instances[i]);
    loss += bce_with_logit(tr.logit, ds.labels[i]);
    preds[i] = tr.probability >= 0.5 ? 1 : 0;
  }
  return {ds.size() ? loss / static_cast<double>(ds.size()) : 0.0, f1_score(ds.labels, preds)};
}

struct EpochRecord {
  /// 0 is the untrained model.
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double train_f1 = 0.0;
  double test_f1 = 0.0;
};

struct TrainResult {
  CritsModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Mini-batch Adam over seeded shuffles. Returns the snapshot with the lowest
/// test loss. `model_config.seed` drives initialization, `train_config.seed`
/// the batch order.
inline TrainResult train_model(const ModelConfig& model_config, const TrainConfig& train_config,
                               const TimeSeriesDataset& train, const TimeSeriesDataset& test,
                               const NormStats* norm = nullptr) {
  train_config.validate();
  train.validate();
  test.validate();
  if (train.channels != model_config.channels || train.length != model_config.length ||
      test.channels != model_config.channels || test.length != model_config.length) {
    throw Error(Errc::ShapeMismatch, "dataset shape does not match the model input shape");
  }

  CritsModel model = init_model(model_config);
  if (norm) model.norm = *norm;
  AdamState adam = AdamState::for_params(model.params);
  Rng rng(train_config.seed);

  TrainResult result;
  const auto record = [&](std::size_t epoch) {
    const DatasetScore tr = score(model, train);
    const DatasetScore te = score(model, test);
    result.history.push_back({epoch, tr.loss, te.loss, tr.f1, te.f1});
    return te.loss;
  };

  double best_loss = record(0);
  result.model = model;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + train_config.batch_size);
      Gradients g = model.params.zeros_like();
      for (std::size_t b = start; b < stop; ++b) {
        const Series& x = train.instances[order[b]];
        const ForwardTrace tr = forward(model, x);
        backpropagate(model, x, tr, tr.probability - static_cast<double>(train.labels[order[b]]), &g, nullptr);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (auto t : g.tensors()) for (double& v : t) v *= scale;
      adam_step(model.params, g, adam, train_config, ++step);
    }
    const double test_loss = record(epoch);
    if (test_loss < best_loss) {
      best_loss = test_loss;
      result.best_epoch = epoch;
      result.model = model;
    } else if (train_config.patience > 0 && epoch - result.best_epoch >= train_config.patience) {
      break;
    }
  }
  return result;
}

inline std::string history_to_csv(const std::vector<EpochRecord>& history) {
  std::string s = "epoch,train_loss,test_loss,train_f1,test_f1\n";
  for (const EpochRecord& r : history) {
    s += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.test_loss) + "," +
         format_double(r.train_f1) + "," + format_double(r.test_f1) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-step perturbation crossed a winner or pattern change.
  std::size_t skipped = 0;
};

/// Central differences against `analytic` over every parameter coordinate.
/// Relative error is |numeric - analytic| / max(1, |analytic|).
inline GradCheckResult grad_check(const CritsModel& model, const Series& x, int y, double step,
                                  const Gradients& analytic) {
  if (!(step > 0.0)) throw Error(Errc::BadParams, "step must be > 0");
  const ForwardTrace base = forward(model, x);
  CritsModel probe = model;
  auto params = probe.params.tensors();
  auto ana = analytic.tensors();
  if (params.size() != ana.size()) throw Error(Errc::ShapeMismatch, "gradient tensors do not mirror the model");

  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double saved = params[i][j];
      params[i][j] = saved + step;
      const ForwardTrace plus = forward(probe, x);
      params[i][j] = saved - step;
      const ForwardTrace minus = forward(probe, x);
      params[i][j] = saved;
      if (!plus.same_region(base) || !minus.same_region(base)) {
        ++res.skipped;
        continue;
      }
      const double numeric = (bce_with_logit(plus.logit, y) - bce_with_logit(minus.logit, y)) / (2.0 * step);
      const double err = std::abs(numeric - ana[i][j]) / std::max(1.0, std::abs(ana[i][j]));
      res.max_relative_error = std::max(res.max_relative_error, err);
      ++res.checked;
    }
  }
  return res;
}

inline GradCheckResult grad_check(const CritsModel& model, const Series& x, int y, double step) {
  return grad_check(model, x, y, step, backward(model, x, y));
}

// ---------------------------------------------------------------------------
// Random hyperparameter search.

struct SearchSpace {
  std::size_t kernel_len_min = 3, kernel_len_max = 16, kernel_len_step = 1;
  std::size_t kernel_count_min = 16, kernel_count_max = 256, kernel_count_step = 16;
  std::size_t layers_min = 3, layers_max = 5, layers_step = 1;
  std::size_t neurons_min = 20, neurons_max = 200, neurons_step = 10;
  std::size_t samples = 500;
  std::size_t trials = 2;
  /// Worker threads for per-sample evaluation; 0 = hardware concurrency.
  std::size_t threads = 1;
};

struct SearchSample {
  std::size_t index = 0;
  ModelConfig config;
  std::vector<double> trial_f1s;
  double mean_f1 = 0.0;
};

struct SearchResult {
  ModelConfig best_config;
  double best_f1 = 0.0;
  std::vector<SearchSample> log;
};

namespace detail {
inline std::size_t draw_grid(Rng& rng, std::size_t lo, std::size_t hi, std::size_t step) {
  std::uniform_int_distribution<std::size_t> d(0, (hi - lo) / step);
  return lo + step * d(rng);
}
}  // namespace detail

/// Draws one configuration on the search grids: kernel length, kernel count,
/// layer count, then each layer's width independently. Kernel lengths above
/// the series length are excluded from the grid.
inline ModelConfig sample_config(const SearchSpace& space, std::size_t channels, std::size_t length, Rng& rng) {
  const std::size_t h_max = std::min(space.kernel_len_max, length);
  if (space.kernel_len_min > h_max) throw Error(Errc::BadConfig, "series shorter than the smallest kernel length");
  ModelConfig c;
  c.channels = channels;
  c.length = length;
  c.kernel_len = detail::draw_grid(rng, space.kernel_len_min, h_max, space.kernel_len_step);
  c.kernel_count = detail::draw_grid(rng, space.kernel_count_min, space.kernel_count_max, space.kernel_count_step);
  const std::size_t layers = detail::draw_grid(rng, space.layers_min, space.layers_max, space.layers_step);
  c.hidden_sizes.clear();
  for (std::size_t l = 0; l < layers; ++l) {
    c.hidden_sizes.push_back(detail::draw_grid(rng, space.neurons_min, space.neurons_max, space.neurons_step));
  }
  return c;
}

/// Samples `space.samples` configurations and trains `space.trials` models
/// for each on the fixed split (trials differ only in initialization and
/// batch order). Ranked by mean test F1, earliest sample wins ties. Every
/// sample derives its seeds from (seed, sample index), so the result does not
/// depend on `space.threads`.
inline SearchResult random_search(const SearchSpace& space, const TrainConfig& train_config,
                                  const TimeSeriesDataset& train, const TimeSeriesDataset& test, std::uint64_t seed) {
  if (space.samples < 1 || space.trials < 1) throw Error(Errc::BadParams, "search budget must be >= 1");
  SearchResult result;
  result.log.resize(space.samples);
  parallel_for(space.samples, space.threads, [&](std::size_t s) {
    Rng rng(derive_seed(seed, {s}));
    SearchSample& entry = result.log[s];
    entry.index = s;
    entry.config = sample_config(space, train.channels, train.length, rng);
    for (std::size_t trial = 0; trial < space.trials; ++trial) {
      ModelConfig mc = entry.config;
      mc.seed = derive_seed(seed, {s, trial, 0});
      TrainConfig tc = train_config;
      tc.seed = derive_seed(seed, {s, trial, 1});
      const TrainResult tr = train_model(mc, tc, train, test);
      entry.trial_f1s.push_back(score(tr.model, test).f1);
    }
    entry.mean_f1 = std::accumulate(entry.trial_f1s.begin(), entry.trial_f1s.end(), 0.0) /
                    static_cast<double>(entry.trial_f1s.size());
  });
  std::size_t best = 0;
  for (std::size_t s = 1; s < result.log.size(); ++s) {
    if (result.log[s].mean_f1 > result.log[best].mean_f1) best = s;
  }
  result.best_config = result.log[best].config;
  result.best_f1 = result.log[best].mean_f1;
  return result;
}

inline std::string search_log_to_csv(const SearchResult& result) {
  std::string s = "sample_index,h,K,hidden_sizes,trial_f1s,mean_f1\n";
  for (const SearchSample& e : result.log) {
    s += std::to_string(e.index) + "," + std::to_string(e.config.kernel_len) + "," +
         std::to_string(e.config.kernel_count) + ",";
    for (std::size_t i = 0; i < e.config.hidden_sizes.size(); ++i) {
      s += (i ? ";" : "") + std::to_string(e.config.hidden_sizes[i]);
    }
    s += ",";
    for (std::size_t i = 0; i < e.trial_f1s.size(); ++i) s += (i ? ";" : "") + format_double(e.trial_f1s[i]);
    s += "," + format_double(e.mean_f1) + "\n";
  }
  return s;
}

}  // namespace crits
