#pragma once

// Dataset ingestion (.ts and CSV), per-channel z-normalization, stratified
// splitting and the synthetic bump dataset with ground-truth masks.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crits/core.hpp"

namespace crits {

/// N equal-length instances of m channels x T steps with binary labels.
struct TimeSeriesDataset {
  std::string name;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<Series> instances;
  std::vector<int> labels;
  /// Original label text for class 0 and class 1 (may hold one entry).
  std::vector<std::string> class_names{"0", "1"};

  std::size_t size() const noexcept { return instances.size(); }

  void validate() const {
    if (instances.empty()) throw Error(Errc::BadShape, "dataset has no instances");
    if (channels < 1 || length < 2) {
      throw Error(Errc::BadShape, "need m >= 1 and T >= 2, got m=" + std::to_string(channels) +
                                      " T=" + std::to_string(length));
    }
    if (labels.size() != instances.size()) throw Error(Errc::ShapeMismatch, "label count != instance count");
    for (const Series& s : instances) {
      if (s.channels() != channels || s.length() != length) {
        throw Error(Errc::RaggedSeries, "instance shape differs from dataset shape");
      }
    }
    for (int y : labels) {
      if (y != 0 && y != 1) throw Error(Errc::NonBinaryLabels, "label " + std::to_string(y));
    }
  }

  TimeSeriesDataset subset(std::span<const std::size_t> indices) const {
    TimeSeriesDataset out{name, channels, length, {}, {}, class_names};
    out.instances.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
      out.instances.push_back(instances.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t channels() const noexcept { return mean.size(); }
};

/// One boolean m x T mask per instance (channel-major), marking injected signal.
struct GroundTruthMask {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<std::vector<std::uint8_t>> cells;

  bool at(std::size_t instance, std::size_t c, std::size_t t) const {
    return cells.at(instance)[c * length + t] != 0;
  }

  GroundTruthMask subset(std::span<const std::size_t> indices) const {
    GroundTruthMask out{channels, length, {}};
    for (std::size_t i : indices) out.cells.push_back(cells.at(i));
    return out;
  }
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

inline std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] inline void numeric_error(std::size_t line, std::size_t column, std::string_view token) {
  throw Error(Errc::NumericParse, "line " + std::to_string(line) + " column " + std::to_string(column) +
                                      ": cannot parse '" + std::string(token) + "'");
}

// Parses comma-separated reals; `offset` is the 0-based position of `field` in its line.
inline std::vector<double> parse_reals(std::string_view field, std::size_t line, std::size_t offset) {
  std::vector<double> out;
  std::size_t start = 0;
  for (std::string_view tok : split(field, ',')) {
    double v = 0;
    if (!parse_double(tok, v)) numeric_error(line, offset + start + 1, tok);
    out.push_back(v);
    start += tok.size() + 1;
  }
  return out;
}

}  // namespace detail

/// Parses the UEA/UCR `.ts` text format. Labels are mapped to {0, 1} in
/// sorted order of their text.
inline TimeSeriesDataset parse_ts(std::string_view text) {
  TimeSeriesDataset ds;
  bool saw_data = false;
  bool saw_labels = false;
  std::set<std::string> declared;
  std::optional<std::size_t> declared_length;
  std::vector<std::string> raw_labels;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;

    if (!saw_data) {
      if (body.front() != '@') throw Error(Errc::MalformedHeader, "line " + std::to_string(line_no) + ": data before @data");
      const auto toks = detail::words(body);
      const std::string key = detail::lower(toks[0]);
      if (key == "@problemname" && toks.size() > 1) {
        ds.name = std::string(toks[1]);
      } else if (key == "@classlabel") {
        if (toks.size() < 2 || detail::lower(toks[1]) != "true") {
          throw Error(Errc::MalformedHeader, "@classLabel must be true for classification data");
        }
        saw_labels = true;
        for (std::size_t i = 2; i < toks.size(); ++i) declared.emplace(toks[i]);
      } else if (key == "@serieslength" && toks.size() > 1) {
        double v = 0;
        if (!parse_double(toks[1], v)) detail::numeric_error(line_no, 1, toks[1]);
        declared_length = static_cast<std::size_t>(v);
      } else if (key == "@data") {
        if (!saw_labels) throw Error(Errc::MalformedHeader, "@data reached without @classLabel");
        saw_data = true;
      }
      continue;
    }

    // Data line: dimensions separated by ':' and the label as the final field.
    const auto fields = split(line, ':');
    if (fields.size() < 2) {
      throw Error(Errc::MalformedHeader, "line " + std::to_string(line_no) + ": data line has no label field");
    }
    std::vector<std::vector<double>> dims;
    std::size_t offset = 0;
    for (std::size_t d = 0; d + 1 < fields.size(); ++d) {
      dims.push_back(detail::parse_reals(fields[d], line_no, offset));
      offset += fields[d].size() + 1;
      if (dims.back().size() != dims.front().size()) {
        throw Error(Errc::RaggedSeries, "line " + std::to_string(line_no) + ": dimension lengths differ");
      }
    }
    const std::size_t m = dims.size();
    const std::size_t T = dims.front().size();
    if (ds.instances.empty()) {
      ds.channels = m;
      ds.length = T;
    } else if (m != ds.channels || T != ds.length) {
      throw Error(Errc::RaggedSeries, "line " + std::to_string(line_no) + ": shape " + std::to_string(m) + "x" +
                                          std::to_string(T) + " differs from " + std::to_string(ds.channels) +
                                          "x" + std::to_string(ds.length));
    }
    std::vector<double> flat;
    flat.reserve(m * T);
    for (auto& d : dims) flat.insert(flat.end(), d.begin(), d.end());
    ds.instances.emplace_back(m, T, std::move(flat));
    raw_labels.emplace_back(trim(fields.back()));
  }

  if (!saw_data) throw Error(Errc::MalformedHeader, saw_labels ? "missing @data" : "missing @classLabel and @data");
  if (ds.instances.empty()) throw Error(Errc::BadShape, "no data lines after @data");
  if (declared_length && *declared_length != ds.length) {
    throw Error(Errc::RaggedSeries, "@seriesLength " + std::to_string(*declared_length) +
                                        " but data has length " + std::to_string(ds.length));
  }

  std::set<std::string> names(declared.begin(), declared.end());
  names.insert(raw_labels.begin(), raw_labels.end());
  if (names.size() > 2) {
    throw Error(Errc::NonBinaryLabels, std::to_string(names.size()) + " distinct class labels");
  }
  ds.class_names.assign(names.begin(), names.end());
  for (const std::string& l : raw_labels) {
    ds.labels.push_back(static_cast<int>(std::distance(names.begin(), names.find(l))));
  }
  ds.validate();
  return ds;
}

struct CsvLayout {
  std::size_t channels = 1;
  /// 0 means "infer from the first row".
  std::size_t length = 0;
};

/// Rows are instances with m*T channel-major values and a trailing 0/1 label.
/// A `# m=<m> T=<T>` comment line, when present, overrides `layout`.
inline TimeSeriesDataset parse_csv(std::string_view text, CsvLayout layout = {}) {
  TimeSeriesDataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      for (std::string_view w : detail::words(body.substr(1))) {
        double v = 0;
        if (w.starts_with("m=") && parse_double(w.substr(2), v)) layout.channels = static_cast<std::size_t>(v);
        if (w.starts_with("T=") && parse_double(w.substr(2), v)) layout.length = static_cast<std::size_t>(v);
      }
      continue;
    }
    std::vector<double> row = detail::parse_reals(line, line_no, 0);
    if (layout.channels == 0) throw Error(Errc::BadShape, "CSV layout needs m >= 1");
    if (layout.length == 0) {
      if (row.size() < 1 || (row.size() - 1) % layout.channels != 0) {
        throw Error(Errc::ShapeMismatch, "line " + std::to_string(line_no) + ": row length " +
                                             std::to_string(row.size()) + " not m*T+1");
      }
      layout.length = (row.size() - 1) / layout.channels;
    }
    if (row.size() != layout.channels * layout.length + 1) {
      throw Error(Errc::ShapeMismatch, "line " + std::to_string(line_no) + ": row length " +
                                           std::to_string(row.size()) + " != m*T+1 = " +
                                           std::to_string(layout.channels * layout.length + 1));
    }
    const double label = row.back();
    if (label != 0.0 && label != 1.0) {
      throw Error(Errc::NonBinaryLabels, "line " + std::to_string(line_no) + ": label " + format_double(label));
    }
    row.pop_back();
    ds.instances.emplace_back(layout.channels, layout.length, std::move(row));
    ds.labels.push_back(static_cast<int>(label));
  }
  ds.channels = layout.channels;
  ds.length = layout.length;
  ds.validate();
  return ds;
}

/// Inverse of parse_csv: header comment plus one row per instance.
inline std::string to_csv(const TimeSeriesDataset& ds) {
  std::string out = "# m=" + std::to_string(ds.channels) + " T=" + std::to_string(ds.length) + "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.instances[i].values()) {
      out += format_double(v);
      out += ',';
    }
    out += std::to_string(ds.labels[i]);
    out += '\n';
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

/// Per-channel mean and population std over every instance and time step.
inline NormStats fit_norm(const TimeSeriesDataset& train) {
  if (train.size() == 0) throw Error(Errc::BadShape, "fit_norm needs at least one instance");
  const std::size_t m = train.channels;
  NormStats stats{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  const double count = static_cast<double>(train.size() * train.length);
  for (std::size_t c = 0; c < m; ++c) {
    double sum = 0;
    for (const Series& s : train.instances) for (double v : s.channel(c)) sum += v;
    const double mean = sum / count;
    double sq = 0;
    for (const Series& s : train.instances) {
      for (double v : s.channel(c)) sq += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(sq / count);
    stats.mean[c] = mean;
    stats.stddev[c] = sd < 1e-12 ? 1.0 : sd;
  }
  return stats;
}

inline Series apply_norm(const NormStats& stats, const Series& x) {
  if (stats.channels() != x.channels()) {
    throw Error(Errc::ChannelMismatch, "stats have " + std::to_string(stats.channels()) + " channels, series has " +
                                           std::to_string(x.channels()));
  }
  Series out = x;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (double& v : out.channel(c)) v = (v - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

inline TimeSeriesDataset apply_norm(const NormStats& stats, const TimeSeriesDataset& ds) {
  TimeSeriesDataset out = ds;
  for (Series& s : out.instances) s = apply_norm(stats, s);
  return out;
}

struct Split {
  TimeSeriesDataset train;
  TimeSeriesDataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Per-class test count is round(fraction * class size), kept within
/// [1, class size - 1]. Index lists are returned in ascending order.
inline Split stratified_split(const TimeSeriesDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::BadParams, "test fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  Split split;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) if (ds.labels[i] == cls) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw Error(Errc::ClassTooSmall, "class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                                           " instance(s); need >= 2");
    }
    std::shuffle(members.begin(), members.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    split.test_indices.insert(split.test_indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train_indices.insert(split.train_indices.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  split.train = ds.subset(split.train_indices);
  split.test = ds.subset(split.test_indices);
  return split;
}

struct SynthData {
  TimeSeriesDataset dataset;
  GroundTruthMask mask;
};

/// White noise (std 1) for class 0; class 1 adds a positive half-sine bump of
/// height `snr` and length `bump_len` at a uniform position on channel 0.
/// Labels alternate 0, 1, 0, 1, ...
inline SynthData synth_bump(std::size_t n, std::size_t m, std::size_t T, std::size_t bump_len, double snr,
                            std::uint64_t seed) {
  if (n < 2 || n % 2 != 0) throw Error(Errc::BadShape, "n must be even and >= 2");
  if (m < 1 || T < 4) throw Error(Errc::BadShape, "need m >= 1 and T >= 4");
  if (bump_len < 2 || 2 * bump_len > T) throw Error(Errc::BadShape, "need 2 <= bump_len <= T/2");
  if (!(snr >= 0.0) || !std::isfinite(snr)) throw Error(Errc::BadShape, "snr must be finite and >= 0");

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> where(0, T - bump_len);

  SynthData out;
  out.dataset.name = "synth_bump";
  out.dataset.channels = m;
  out.dataset.length = T;
  out.mask.channels = m;
  out.mask.length = T;
  for (std::size_t i = 0; i < n; ++i) {
    Series x(m, T);
    for (double& v : x.values()) v = noise(rng);
    std::vector<std::uint8_t> mask(m * T, 0);
    const int label = static_cast<int>(i % 2);
    if (label == 1) {
      const std::size_t start = where(rng);
      for (std::size_t j = 0; j < bump_len; ++j) {
        const double phase = std::numbers::pi * static_cast<double>(j + 1) / static_cast<double>(bump_len + 1);
        x(0, start + j) += snr * std::sin(phase);
        mask[start + j] = 1;
      }
    }
    out.dataset.instances.push_back(std::move(x));
    out.dataset.labels.push_back(label);
    out.mask.cells.push_back(std::move(mask));
  }
  return out;
}

inline std::string mask_to_csv(const GroundTruthMask& mask) {
  std::string out = "# m=" + std::to_string(mask.channels) + " T=" + std::to_string(mask.length) + "\n";
  for (const auto& row : mask.cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += row[j] ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

}  // namespace crits
