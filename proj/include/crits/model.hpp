#pragma once

// The classifier: one linear convolution layer (K kernels of h x m, stride 1,
// no padding), global max-pooling per filter, a ReLU network and a sigmoid
// output neuron. The forward pass records the max-pool winners and the ReLU
// activation patterns, which together select the local affine map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crits/core.hpp"
#include "crits/data.hpp"

namespace crits {

struct ModelConfig {
  std::size_t kernel_len = 8;
  std::size_t kernel_count = 8;
  std::vector<std::size_t> hidden_sizes{16};
  std::size_t channels = 1;
  std::size_t length = 2;
  std::uint64_t seed = 0;

  std::size_t positions() const noexcept { return length - kernel_len + 1; }

  void validate() const {
    if (channels < 1 || length < 2) throw Error(Errc::BadConfig, "input shape needs m >= 1 and T >= 2");
    if (kernel_len < 1 || kernel_len > length) {
      throw Error(Errc::BadConfig, "kernel length " + std::to_string(kernel_len) + " outside [1, T=" +
                                       std::to_string(length) + "]");
    }
    if (kernel_count < 1) throw Error(Errc::BadConfig, "need at least one kernel");
    if (hidden_sizes.empty()) throw Error(Errc::BadConfig, "need at least one hidden layer");
    for (std::size_t n : hidden_sizes) {
      if (n < 1) throw Error(Errc::BadConfig, "hidden layer sizes must be >= 1");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fully connected layer; weights are outputs x inputs, row-major.
struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  double weight(std::size_t out, std::size_t in) const { return weights[out * inputs + in]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Every learnable tensor of the classifier. Also used for gradients and Adam
/// moments, which share the exact same shapes.
struct Parameters {
  /// K x m x h: kernels[(k * m + c) * h + tau] multiplies x[c, t + tau].
  std::vector<double> kernels;
  std::vector<double> conv_bias;
  std::vector<DenseLayer> hidden;
  std::vector<double> out_weights;
  double out_bias = 0.0;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out{kernels, conv_bias};
    for (DenseLayer& l : hidden) {
      out.emplace_back(l.weights);
      out.emplace_back(l.bias);
    }
    out.emplace_back(out_weights);
    out.emplace_back(&out_bias, 1);
    return out;
  }

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out{kernels, conv_bias};
    for (const DenseLayer& l : hidden) {
      out.emplace_back(l.weights);
      out.emplace_back(l.bias);
    }
    out.emplace_back(out_weights);
    out.emplace_back(&out_bias, 1);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
  }

  /// Same shapes, every entry zero.
  Parameters zeros_like() const {
    Parameters z = *this;
    for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
    return z;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

using Gradients = Parameters;

struct CritsModel {
  ModelConfig config;
  Parameters params;
  NormStats norm;

  double kernel(std::size_t k, std::size_t c, std::size_t tau) const {
    return params.kernels[(k * config.channels + c) * config.kernel_len + tau];
  }
};

struct ForwardTrace {
  std::size_t positions = 0;
  std::size_t kernel_count = 0;
  /// (T - h + 1) x K, row-major: feature_map[t * K + k].
  std::vector<double> feature_map;
  std::vector<double> pooled;
  /// Smallest time index attaining each filter's maximum.
  std::vector<std::size_t> winners;
  std::vector<std::vector<double>> pre_activations;
  std::vector<std::vector<double>> activations;
  /// patterns[l][j] = 1 iff pre-activation of unit j in layer l is > 0.
  std::vector<std::vector<std::uint8_t>> patterns;
  double logit = 0.0;
  double probability = 0.5;

  double feature(std::size_t t, std::size_t k) const { return feature_map[t * kernel_count + k]; }

  /// True when both traces select the same affine piece of the network.
  bool same_region(const ForwardTrace& other) const {
    return winners == other.winners && patterns == other.patterns;
  }
};

/// He-style init: uniform in +-sqrt(6 / fan_in), i.e. std sqrt(2 / fan_in).
/// All biases start at zero; norm stats start as the identity.
inline CritsModel init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto draw = [&rng](std::vector<double>& v, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& w : v) w = u(rng);
  };

  CritsModel model;
  model.config = config;
  const std::size_t K = config.kernel_count;
  Parameters& p = model.params;
  p.kernels.assign(K * config.channels * config.kernel_len, 0.0);
  draw(p.kernels, config.kernel_len * config.channels);
  p.conv_bias.assign(K, 0.0);
  std::size_t in = K;
  for (std::size_t out : config.hidden_sizes) {
    DenseLayer layer{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
    draw(layer.weights, in);
    p.hidden.push_back(std::move(layer));
    in = out;
  }
  p.out_weights.assign(in, 0.0);
  draw(p.out_weights, in);
  p.out_bias = 0.0;
  model.norm = NormStats{std::vector<double>(config.channels, 0.0), std::vector<double>(config.channels, 1.0)};
  return model;
}

/// Throws CorruptModel unless the parameter tensors chain K -> hidden... -> 1.
inline void check_dimensions(const CritsModel& model) {
  const ModelConfig& c = model.config;
  const Parameters& p = model.params;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::CorruptModel, e.what());
  }
  if (p.kernels.size() != c.kernel_count * c.channels * c.kernel_len || p.conv_bias.size() != c.kernel_count) {
    throw Error(Errc::CorruptModel, "convolution tensor sizes disagree with config");
  }
  if (p.hidden.size() != c.hidden_sizes.size()) throw Error(Errc::CorruptModel, "hidden layer count mismatch");
  std::size_t in = c.kernel_count;
  for (std::size_t l = 0; l < p.hidden.size(); ++l) {
    const DenseLayer& layer = p.hidden[l];
    if (layer.inputs != in || layer.outputs != c.hidden_sizes[l] || layer.weights.size() != in * layer.outputs ||
        layer.bias.size() != layer.outputs) {
      throw Error(Errc::CorruptModel, "layer " + std::to_string(l) + " breaks the dimension chain");
    }
    in = layer.outputs;
  }
  if (p.out_weights.size() != in) throw Error(Errc::CorruptModel, "output weights break the dimension chain");
  if (model.norm.mean.size() != c.channels || model.norm.stddev.size() != c.channels) {
    throw Error(Errc::CorruptModel, "norm stats channel count mismatch");
  }
  for (auto t : p.tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) throw Error(Errc::CorruptModel, "non-finite parameter");
    }
  }
}

inline ForwardTrace forward(const CritsModel& model, const Series& x) {
  const ModelConfig& cfg = model.config;
  if (x.channels() != cfg.channels || x.length() != cfg.length) {
    throw Error(Errc::ShapeMismatch, "input is " + std::to_string(x.channels()) + "x" + std::to_string(x.length()) +
                                         ", model expects " + std::to_string(cfg.channels) + "x" +
                                         std::to_string(cfg.length));
  }
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "input contains a non-finite value");
  }

  const std::size_t K = cfg.kernel_count;
  const std::size_t h = cfg.kernel_len;
  const std::size_t P = cfg.positions();
  const Parameters& prm = model.params;

  ForwardTrace tr;
  tr.positions = P;
  tr.kernel_count = K;
  tr.feature_map.assign(P * K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < P; ++t) {
      double acc = prm.conv_bias[k];
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double* w = &prm.kernels[(k * cfg.channels + c) * h];
        const double* xs = &x.channel(c)[t];
        for (std::size_t tau = 0; tau < h; ++tau) acc += w[tau] * xs[tau];
      }
      tr.feature_map[t * K + k] = acc;
    }
  }

  tr.pooled.assign(K, 0.0);
  tr.winners.assign(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < P; ++t) {
      if (tr.feature_map[t * K + k] > tr.feature_map[best * K + k]) best = t;
    }
    tr.winners[k] = best;
    tr.pooled[k] = tr.feature_map[best * K + k];
  }

  const std::vector<double>* input = &tr.pooled;
  for (const DenseLayer& layer : prm.hidden) {
    std::vector<double> pre(layer.outputs);
    std::vector<double> act(layer.outputs);
    std::vector<std::uint8_t> pattern(layer.outputs);
    for (std::size_t j = 0; j < layer.outputs; ++j) {
      double acc = layer.bias[j];
      const double* w = &layer.weights[j * layer.inputs];
      for (std::size_t i = 0; i < layer.inputs; ++i) acc += w[i] * (*input)[i];
      pre[j] = acc;
      pattern[j] = acc > 0.0 ? 1 : 0;
      act[j] = pattern[j] ? acc : 0.0;
    }
    tr.pre_activations.push_back(std::move(pre));
    tr.activations.push_back(std::move(act));
    tr.patterns.push_back(std::move(pattern));
    input = &tr.activations.back();
  }

  double z = prm.out_bias;
  for (std::size_t i = 0; i < prm.out_weights.size(); ++i) z += prm.out_weights[i] * (*input)[i];
  tr.logit = z;
  tr.probability = sigmoid(z);
  return tr;
}

inline double predict_proba(const CritsModel& model, const Series& x) { return forward(model, x).probability; }

inline int predict_label(const CritsModel& model, const Series& x) { return predict_proba(model, x) >= 0.5 ? 1 : 0; }

// ---------------------------------------------------------------------------
// Model file: line-oriented key=value text.
//
//   crits-model
//   version=1
//   channels=, length=, kernel_len=, kernel_count=, hidden=a,b,c, seed=
//   norm_mean=..., norm_std=...
//   kernels=...            (K x m x h, row-major)
//   conv_bias=...
//   layer<i>_weights=...   (outputs x inputs, row-major)
//   layer<i>_bias=...
//   out_weights=..., out_bias=...
//   end
//
// Numbers use the shortest round-trip decimal form.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::string join_numbers(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

inline std::vector<double> parse_number_list(const std::string& key, std::string_view text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (std::string_view tok : split(text, ',')) {
    double v = 0;
    if (!parse_double(tok, v)) throw Error(Errc::CorruptModel, "bad number in '" + key + "'");
    out.push_back(v);
  }
  return out;
}

inline std::size_t parse_count(const std::string& key, std::string_view text) {
  double v = 0;
  if (!parse_double(text, v) || v < 0 || v != std::floor(v)) {
    throw Error(Errc::CorruptModel, "bad integer in '" + key + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline std::string serialize_model(const CritsModel& model) {
  const ModelConfig& c = model.config;
  std::string s = "crits-model\nversion=" + std::to_string(kModelFormatVersion) + "\n";
  s += "channels=" + std::to_string(c.channels) + "\n";
  s += "length=" + std::to_string(c.length) + "\n";
  s += "kernel_len=" + std::to_string(c.kernel_len) + "\n";
  s += "kernel_count=" + std::to_string(c.kernel_count) + "\n";
  s += "hidden=";
  for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) s += (i ? "," : "") + std::to_string(c.hidden_sizes[i]);
  s += "\nseed=" + std::to_string(c.seed) + "\n";
  s += "norm_mean=" + detail::join_numbers(model.norm.mean) + "\n";
  s += "norm_std=" + detail::join_numbers(model.norm.stddev) + "\n";
  const Parameters& p = model.params;
  s += "kernels=" + detail::join_numbers(p.kernels) + "\n";
  s += "conv_bias=" + detail::join_numbers(p.conv_bias) + "\n";
  for (std::size_t l = 0; l < p.hidden.size(); ++l) {
    s += "layer" + std::to_string(l) + "_weights=" + detail::join_numbers(p.hidden[l].weights) + "\n";
    s += "layer" + std::to_string(l) + "_bias=" + detail::join_numbers(p.hidden[l].bias) + "\n";
  }
  s += "out_weights=" + detail::join_numbers(p.out_weights) + "\n";
  s += "out_bias=" + format_double(p.out_bias) + "\n";
  s += "end\n";
  return s;
}

inline CritsModel deserialize_model(std::string_view text) {
  std::map<std::string, std::string> kv;
  bool has_magic = false;
  bool has_end = false;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    line = trim(line);
    if (line.empty()) continue;
    ++line_no;
    if (line_no == 1) {
      if (line != "crits-model") throw Error(Errc::CorruptModel, "missing crits-model header");
      has_magic = true;
      continue;
    }
    if (line == "end") {
      has_end = true;
      break;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(Errc::CorruptModel, "line without '=': " + std::string(line));
    kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  if (!has_magic) throw Error(Errc::CorruptModel, "empty model file");
  const auto get = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(Errc::CorruptModel, "missing field '" + key + "'");
    return it->second;
  };
  if (kv.count("version")) {
    const std::size_t version = detail::parse_count("version", get("version"));
    if (version != kModelFormatVersion) {
      throw Error(Errc::VersionMismatch, "model version " + std::to_string(version) + ", expected " +
                                             std::to_string(kModelFormatVersion));
    }
  } else {
    throw Error(Errc::CorruptModel, "missing field 'version'");
  }
  if (!has_end) throw Error(Errc::CorruptModel, "truncated model file (no end marker)");

  CritsModel m;
  ModelConfig& c = m.config;
  c.channels = detail::parse_count("channels", get("channels"));
  c.length = detail::parse_count("length", get("length"));
  c.kernel_len = detail::parse_count("kernel_len", get("kernel_len"));
  c.kernel_count = detail::parse_count("kernel_count", get("kernel_count"));
  c.hidden_sizes.clear();
  for (double v : detail::parse_number_list("hidden", get("hidden"))) c.hidden_sizes.push_back(static_cast<std::size_t>(v));
  {
    const std::string& seed = get("seed");
    try {
      c.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw Error(Errc::CorruptModel, "bad seed");
    }
  }
  m.norm.mean = detail::parse_number_list("norm_mean", get("norm_mean"));
  m.norm.stddev = detail::parse_number_list("norm_std", get("norm_std"));
  Parameters& p = m.params;
  p.kernels = detail::parse_number_list("kernels", get("kernels"));
  p.conv_bias = detail::parse_number_list("conv_bias", get("conv_bias"));
  std::size_t in = c.kernel_count;
  for (std::size_t l = 0; l < c.hidden_sizes.size(); ++l) {
    DenseLayer layer;
    layer.inputs = in;
    layer.outputs = c.hidden_sizes[l];
    layer.weights = detail::parse_number_list("weights", get("layer" + std::to_string(l) + "_weights"));
    layer.bias = detail::parse_number_list("bias", get("layer" + std::to_string(l) + "_bias"));
    p.hidden.push_back(std::move(layer));
    in = c.hidden_sizes[l];
  }
  p.out_weights = detail::parse_number_list("out_weights", get("out_weights"));
  const auto ob = detail::parse_number_list("out_bias", get("out_bias"));
  if (ob.size() != 1) throw Error(Errc::CorruptModel, "out_bias must hold one value");
  p.out_bias = ob[0];
  check_dimensions(m);
  return m;
}

inline void save_model(const CritsModel& model, const std::string& path) {
  write_text_file(path, serialize_model(model));
}

inline CritsModel load_model(const std::string& path) { return deserialize_model(read_text_file(path)); }

}  // namespace crits
