#pragma once

// Explanation-quality metrics: relevance-guided perturbation and alignment,
// input-sensitivity under Gaussian noise, sparsity, and the repeated
// sampling protocol that aggregates them into an EvalReport.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "crits/core.hpp"
#include "crits/data.hpp"
#include "crits/explain.hpp"
#include "crits/model.hpp"

namespace crits {

enum class PerturbKind { Zero, Inverse, Swap, Mean };

inline const char* perturb_name(PerturbKind k) {
  switch (k) {
    case PerturbKind::Zero: return "zero";
    case PerturbKind::Inverse: return "inverse";
    case PerturbKind::Swap: return "swap";
    case PerturbKind::Mean: return "mean";
  }
  return "?";
}

inline constexpr PerturbKind kAllPerturbations[] = {PerturbKind::Zero, PerturbKind::Inverse, PerturbKind::Swap,
                                                    PerturbKind::Mean};

struct PerturbMethod {
  PerturbKind kind = PerturbKind::Zero;
  /// Fraction q of the m*T cells to select, in (0, 1].
  double fraction = 0.1;
  /// Window length for Swap/Mean.
  std::size_t window = 2;

  void validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(Errc::BadParams, "perturbation fraction must lie in (0, 1]");
    if ((kind == PerturbKind::Swap || kind == PerturbKind::Mean) && window < 2) {
      throw Error(Errc::BadParams, "swap/mean window must be >= 2");
    }
  }
};

/// Indices (channel-major) of the top ceil(q * m * T) cells by |relevance|,
/// ties resolved by the smaller index.
inline std::vector<std::size_t> select_cells(const SaliencyMap& relevance, double fraction) {
  const std::size_t n = relevance.size();
  const auto count = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto rel = relevance.values();
  std::stable_sort(idx.begin(), idx.end(),
                   [&rel](std::size_t a, std::size_t b) { return std::abs(rel[a]) > std::abs(rel[b]); });
  idx.resize(std::max<std::size_t>(count, 1));
  return idx;
}

inline Series perturb(const Series& x, const SaliencyMap& relevance, const PerturbMethod& method) {
  method.validate();
  if (!x.same_shape(relevance)) throw Error(Errc::ShapeMismatch, "relevance shape differs from input");
  for (double v : relevance.values()) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "relevance contains a non-finite value");
  }
  const std::size_t T = x.length();
  const std::vector<std::size_t> cells = select_cells(relevance, method.fraction);
  Series out = x;

  if (method.kind == PerturbKind::Zero || method.kind == PerturbKind::Inverse) {
    std::vector<double> channel_max(x.channels());
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const auto ch = x.channel(c);
      channel_max[c] = *std::max_element(ch.begin(), ch.end());
    }
    for (std::size_t i : cells) {
      double& v = out.values()[i];
      v = method.kind == PerturbKind::Zero ? 0.0 : channel_max[i / T] - x.values()[i];
    }
    return out;
  }

  // Window of length `window` centred on each selected time step, clipped to
  // the series, then merged per channel where windows intersect.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> spans(x.channels());
  const auto half = static_cast<std::ptrdiff_t>(method.window / 2);
  for (std::size_t i : cells) {
    const auto t = static_cast<std::ptrdiff_t>(i % T);
    const std::ptrdiff_t lo = t - half;
    const std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(method.window) - 1;
    spans[i / T].emplace_back(static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0)),
                              static_cast<std::size_t>(std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(T) - 1)));
  }
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto& s = spans[c];
    std::sort(s.begin(), s.end());
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& w : s) {
      if (!merged.empty() && w.first <= merged.back().second) {
        merged.back().second = std::max(merged.back().second, w.second);
      } else {
        merged.push_back(w);
      }
    }
    auto ch = out.channel(c);
    for (const auto& [a, b] : merged) {
      if (method.kind == PerturbKind::Swap) {
        std::reverse(ch.begin() + static_cast<std::ptrdiff_t>(a), ch.begin() + static_cast<std::ptrdiff_t>(b) + 1);
      } else {
        double sum = 0.0;
        for (std::size_t t = a; t <= b; ++t) sum += ch[t];
        const double mean = sum / static_cast<double>(b - a + 1);
        for (std::size_t t = a; t <= b; ++t) ch[t] = mean;
      }
    }
  }
  return out;
}

/// Root-mean-square of a list of differences.
inline double rms(std::span<const double> diffs) {
  if (diffs.empty()) return 0.0;
  double acc = 0.0;
  for (double d : diffs) acc += d * d;
  return std::sqrt(acc / static_cast<double>(diffs.size()));
}

inline double rmse(const SaliencyMap& a, const SaliencyMap& b) {
  if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, "maps differ in shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

/// Change in p(x) after perturbing the cells the explanation ranks highest.
inline double probability_shift(const CritsModel& model, const Explainer& explainer, const SaliencyMap& map,
                                const Series& x, const PerturbMethod& method) {
  const Series xp = perturb(x, explainer.relevance(map, x), method);
  return predict_proba(model, x) - predict_proba(model, xp);
}

/// A = RMSE over instances of p(x) - p(perturbed x). Instance i uses explainer
/// seed derive_seed(seed, {i}).
inline double alignment(const CritsModel& model, const Explainer& explainer, std::span<const Series> instances,
                        const PerturbMethod& method, std::uint64_t seed = 0) {
  if (instances.empty()) throw Error(Errc::BadParams, "alignment needs at least one instance");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const SaliencyMap map = explainer.explain(model, instances[i], derive_seed(seed, {i}));
    diffs.push_back(probability_shift(model, explainer, map, instances[i], method));
  }
  return rms(diffs);
}

namespace detail {
inline Series add_noise(const Series& x, double noise_std, std::uint64_t seed) {
  Series out = x;
  if (noise_std == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  for (double& v : out.values()) v += noise(rng);
  return out;
}
}  // namespace detail

/// RMSE between the explanation of x and of x plus N(0, noise_std^2) noise.
/// The explainer's own seed is the same for both calls.
inline double input_sensitivity(const CritsModel& model, const Explainer& explainer, const Series& x,
                                double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw Error(Errc::BadParams, "noise std must be >= 0");
  const std::uint64_t explainer_seed = derive_seed(seed, {1});
  const SaliencyMap base = explainer.explain(model, x, explainer_seed);
  const Series noisy = detail::add_noise(x, noise_std, derive_seed(seed, {0}));
  return rmse(base, explainer.explain(model, noisy, explainer_seed));
}

inline constexpr double kSparsityThreshold = 0.01;

/// Fraction of cells whose magnitude exceeds 0.01.
inline double sparsity(const SaliencyMap& map) {
  if (map.size() == 0) return 0.0;
  std::size_t n = 0;
  for (double v : map.values()) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "map contains a non-finite value");
    if (std::abs(v) > kSparsityThreshold) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(map.size());
}

// ---------------------------------------------------------------------------
// Protocol

struct ProtocolConfig {
  std::string dataset = "dataset";
  std::size_t samples = 50;
  std::size_t repetitions = 5;
  double fraction = 0.1;
  /// Swap/Mean window; 0 means the model's kernel length.
  std::size_t window = 0;
  std::vector<double> noise_grid{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t threads = 1;
};

struct EvalRecord {
  std::string explainer;
  std::string dataset;
  /// "alignment", "input_sensitivity" or "sparsity".
  std::string metric;
  /// Perturbation name, noise std, or "instance=<index>".
  std::string setting;
  std::size_t repetition = 0;
  double value = 0.0;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::size_t samples_per_repetition = 0;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  std::size_t window = 0;
  std::vector<double> noise_grid;

  std::vector<double> values(std::string_view explainer, std::string_view metric, std::string_view setting) const {
    std::vector<double> out;
    for (const EvalRecord& r : records) {
      if (r.explainer == explainer && r.metric == metric && r.setting == setting) out.push_back(r.value);
    }
    return out;
  }
};

/// For each repetition, draws min(samples, |test|) instances without
/// replacement, then records per explainer: alignment for every perturbation
/// kind, mean input-sensitivity per noise level and per-instance sparsity.
/// Seeds derive from (seed, repetition, instance index) only, so neither the
/// thread count nor the explainer order changes the report.
inline EvalReport run_protocol(const CritsModel& model, const std::vector<Explainer>& explainers,
                               const TimeSeriesDataset& test, std::uint64_t seed, const ProtocolConfig& cfg = {}) {
  if (explainers.empty()) throw Error(Errc::BadParams, "no explainers registered");
  if (cfg.repetitions < 1 || cfg.samples < 1) throw Error(Errc::BadParams, "protocol needs >= 1 sample and repetition");
  test.validate();

  EvalReport report;
  report.samples_per_repetition = std::min(cfg.samples, test.size());
  report.repetitions = cfg.repetitions;
  report.seed = seed;
  report.fraction = cfg.fraction;
  report.window = cfg.window ? cfg.window : std::max<std::size_t>(2, model.config.kernel_len);
  report.noise_grid = cfg.noise_grid;

  std::vector<const Explainer*> ordered;
  for (const Explainer& e : explainers) ordered.push_back(&e);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Explainer* a, const Explainer* b) { return a->name < b->name; });

  const std::size_t n_kinds = std::size(kAllPerturbations);
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    std::vector<std::size_t> pool(test.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {rep}));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(report.samples_per_repetition);
    std::sort(pool.begin(), pool.end());

    for (const Explainer* ex : ordered) {
      // Per-instance results: shifts per perturbation kind, IS per noise level, sparsity.
      std::vector<std::vector<double>> shifts(n_kinds, std::vector<double>(pool.size()));
      std::vector<std::vector<double>> sens(cfg.noise_grid.size(), std::vector<double>(pool.size()));
      std::vector<double> sparse(pool.size());

      parallel_for(pool.size(), cfg.threads, [&](std::size_t j) {
        const std::size_t idx = pool[j];
        const Series& x = test.instances[idx];
        const std::uint64_t explainer_seed = derive_seed(seed, {rep, idx, 0});
        const SaliencyMap map = ex->explain(model, x, explainer_seed);
        const SaliencyMap rel = ex->relevance(map, x);
        const double p = predict_proba(model, x);
        for (std::size_t k = 0; k < n_kinds; ++k) {
          const PerturbMethod method{kAllPerturbations[k], cfg.fraction, report.window};
          shifts[k][j] = p - predict_proba(model, perturb(x, rel, method));
        }
        for (std::size_t g = 0; g < cfg.noise_grid.size(); ++g) {
          const Series noisy = detail::add_noise(x, cfg.noise_grid[g], derive_seed(seed, {rep, idx, 1, g}));
          sens[g][j] = rmse(map, ex->explain(model, noisy, explainer_seed));
        }
        sparse[j] = sparsity(map);
      });

      for (std::size_t k = 0; k < n_kinds; ++k) {
        report.records.push_back({ex->name, cfg.dataset, "alignment", perturb_name(kAllPerturbations[k]), rep + 1,
                                  rms(shifts[k])});
      }
      for (std::size_t g = 0; g < cfg.noise_grid.size(); ++g) {
        const double mean = std::accumulate(sens[g].begin(), sens[g].end(), 0.0) / static_cast<double>(pool.size());
        report.records.push_back(
            {ex->name, cfg.dataset, "input_sensitivity", format_double(cfg.noise_grid[g]), rep + 1, mean});
      }
      for (std::size_t j = 0; j < pool.size(); ++j) {
        report.records.push_back(
            {ex->name, cfg.dataset, "sparsity", "instance=" + std::to_string(pool[j]), rep + 1, sparse[j]});
      }
    }
  }

  std::stable_sort(report.records.begin(), report.records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return std::tie(a.explainer, a.metric) < std::tie(b.explainer, b.metric);
  });
  return report;
}

inline std::string report_to_csv(const EvalReport& r) {
  std::string s = "# samples=" + std::to_string(r.samples_per_repetition) +
                  " repetitions=" + std::to_string(r.repetitions) + " seed=" + std::to_string(r.seed) +
                  " q=" + format_double(r.fraction) + " window=" + std::to_string(r.window) +
                  " ranking=intrinsic:|w*x|,others:|map|\n";
  s += "explainer,dataset,metric,setting,repetition,value\n";
  for (const EvalRecord& e : r.records) {
    s += e.explainer + "," + e.dataset + "," + e.metric + "," + e.setting + "," + std::to_string(e.repetition) + "," +
         format_double(e.value) + "\n";
  }
  return s;
}

/// Reads the long-format rows back; metadata comments are ignored.
inline std::vector<EvalRecord> report_records_from_csv(std::string_view text) {
  std::vector<EvalRecord> out;
  bool header = false;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "explainer,dataset,metric,setting,repetition,value") {
        throw Error(Errc::MalformedHeader, "not an eval report (line " + std::to_string(line_no) + ")");
      }
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 6) throw Error(Errc::ShapeMismatch, "report row with " + std::to_string(f.size()) + " fields");
    EvalRecord r{std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]), 0, 0.0};
    double rep = 0;
    if (!parse_double(f[4], rep) || !parse_double(f[5], r.value)) detail::numeric_error(line_no, 1, line);
    r.repetition = static_cast<std::size_t>(rep);
    out.push_back(std::move(r));
  }
  if (!header) throw Error(Errc::MalformedHeader, "eval report has no header row");
  return out;
}

}  // namespace crits
