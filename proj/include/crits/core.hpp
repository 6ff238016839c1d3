#pragma once

// Shared vocabulary for the crits library: error type, the m x T series
// container, seed derivation and locale-independent number formatting.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <thread>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace crits {

enum class Errc {
  MalformedHeader,
  RaggedSeries,
  NonBinaryLabels,
  NumericParse,
  ShapeMismatch,
  ChannelMismatch,
  ClassTooSmall,
  BadShape,
  BadConfig,
  NonFiniteInput,
  IoError,
  VersionMismatch,
  CorruptModel,
  TraceMismatch,
  BadParams,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::RaggedSeries: return "RaggedSeries";
    case Errc::NonBinaryLabels: return "NonBinaryLabels";
    case Errc::NumericParse: return "NumericParse";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::BadShape: return "BadShape";
    case Errc::BadConfig: return "BadConfig";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::IoError: return "IoError";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptModel: return "CorruptModel";
    case Errc::TraceMismatch: return "TraceMismatch";
    case Errc::BadParams: return "BadParams";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the category so
/// callers (and the CLI) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Dense m x T grid of reals, stored channel-major: value (c, t) lives at
/// index c * T + t.
class Series {
 public:
  Series() = default;
  Series(std::size_t channels, std::size_t length, double fill = 0.0)
      : channels_(channels), length_(length), values_(channels * length, fill) {}
  Series(std::size_t channels, std::size_t length, std::vector<double> values)
      : channels_(channels), length_(length), values_(std::move(values)) {
    if (values_.size() != channels_ * length_) {
      throw Error(Errc::ShapeMismatch, "series value count " + std::to_string(values_.size()) +
                                           " != " + std::to_string(channels_ * length_));
    }
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t length() const noexcept { return length_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(std::size_t c, std::size_t t) { return values_[c * length_ + t]; }
  double operator()(std::size_t c, std::size_t t) const { return values_[c * length_ + t]; }

  std::span<double> channel(std::size_t c) { return {values_.data() + c * length_, length_}; }
  std::span<const double> channel(std::size_t c) const {
    return {values_.data() + c * length_, length_};
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const Series& other) const noexcept {
    return channels_ == other.channels_ && length_ == other.length_;
  }

  friend bool operator==(const Series&, const Series&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t length_ = 0;
  std::vector<double> values_;
};

/// Generic explainer output over the input grid.
using SaliencyMap = Series;

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Child seed for a position in a tree of random streams. Depends only on the
/// master seed and the path, so concurrent and sequential consumers agree.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = detail::splitmix64(master);
  for (std::uint64_t p : path) h = detail::splitmix64(h ^ detail::splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Shortest decimal that round-trips to the same binary64 value.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error(Errc::IoError, "cannot format number");
  return std::string(buf, end);
}

inline std::string_view trim(std::string_view s) {
  const auto ws = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

/// Locale-independent parse of a whole token; returns false on any leftover
/// characters or a non-finite result.
inline bool parse_double(std::string_view token, double& out) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  if (token.empty()) return false;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc{} && ptr == token.data() + token.size() && std::isfinite(out);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double sigmoid(double z) {
  // Clamped so that 0 < p < 1 holds even where binary64 would round to 0 or 1.
  const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  constexpr double lo = 0x1p-1074;
  constexpr double hi = 1.0 - 0x1p-53;
  return p < lo ? lo : (p > hi ? hi : p);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Work is claimed in index order; the first exception thrown
/// by any index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace crits
