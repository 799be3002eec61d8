#pragma once

// Controlled paths: continuous interpolants X(t) of irregular, partially observed
// series, with channel 0 carrying normalised time.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsde/errors.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

struct IrregularSeries {
  std::vector<double> times;         // strictly increasing
  std::size_t channels = 0;          // d_x
  std::vector<double> values;        // times.size() x channels, row-major
  std::vector<std::uint8_t> mask;    // 1 = observed
  std::optional<int> label;
  // Regression targets (interpolation / forecasting tasks).
  std::vector<double> target;
  std::vector<std::uint8_t> target_mask;

  std::size_t length() const { return times.size(); }
  double value(std::size_t k, std::size_t c) const { return values[k * channels + c]; }
  bool observed(std::size_t k, std::size_t c) const { return mask[k * channels + c] != 0; }
  std::size_t observed_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < length(); ++k) n += observed(k, c);
    return n;
  }
};

/// Checks the structural invariants; throws ValidationError / EmptyChannel.
inline void validate(const IrregularSeries& s) {
  if (s.values.size() != s.times.size() * s.channels || s.mask.size() != s.values.size()) {
    throw ValidationError("series: values/mask size does not match times x channels");
  }
  for (std::size_t k = 1; k < s.times.size(); ++k) {
    if (!(s.times[k] > s.times[k - 1])) throw ValidationError("series: times must be strictly increasing");
  }
  for (std::size_t c = 0; c < s.channels; ++c) {
    if (s.observed_count(c) == 0) throw EmptyChannel("series: channel " + std::to_string(c) + " has no observations");
  }
}

enum class PathScheme { linear, rectilinear, natural_cubic, hermite_cubic_backward };

inline std::string to_string(PathScheme s) {
  switch (s) {
    case PathScheme::linear: return "linear";
    case PathScheme::rectilinear: return "rectilinear";
    case PathScheme::natural_cubic: return "natural-cubic";
    case PathScheme::hermite_cubic_backward: return "hermite-cubic-backward";
  }
  return "linear";
}

inline PathScheme parse_path_scheme(const std::string& s) {
  if (s == "linear") return PathScheme::linear;
  if (s == "rectilinear") return PathScheme::rectilinear;
  if (s == "natural-cubic") return PathScheme::natural_cubic;
  if (s == "hermite-cubic-backward") return PathScheme::hermite_cubic_backward;
  throw ValidationError("unknown path scheme '" + s + "'");
}

/// Per channel: interior gaps linearly interpolated, leading gaps take the first
/// observation, trailing gaps the last. Returns the complete n x d grid.
inline std::vector<double> fill_missing(const IrregularSeries& s) {
  const std::size_t n = s.length(), d = s.channels;
  std::vector<double> out(n * d);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<std::size_t> obs;
    for (std::size_t k = 0; k < n; ++k) {
      if (s.observed(k, c)) obs.push_back(k);
    }
    if (obs.empty()) throw EmptyChannel("fill_missing: channel " + std::to_string(c) + " has no observations");
    std::size_t next = 0;  // index into obs of the first observation at or after k
    for (std::size_t k = 0; k < n; ++k) {
      while (next < obs.size() && obs[next] < k) ++next;
      double v;
      if (next < obs.size() && obs[next] == k) {
        v = s.value(k, c);
      } else if (next == 0) {
        v = s.value(obs.front(), c);
      } else if (next == obs.size()) {
        v = s.value(obs.back(), c);
      } else {
        const std::size_t lo = obs[next - 1], hi = obs[next];
        const double w = (s.times[k] - s.times[lo]) / (s.times[hi] - s.times[lo]);
        v = s.value(lo, c) + w * (s.value(hi, c) - s.value(lo, c));
      }
      out[k * d + c] = v;
    }
  }
  return out;
}

/// Piecewise-cubic interpolant over breakpoints; segment j, channel c holds
/// coefficients of a + b s + c s^2 + d s^3 with s = t - breakpoints[j].
class ControlledPath {
 public:
  using Coeffs = std::array<double, 4>;

  ControlledPath() = default;
  ControlledPath(std::vector<double> breakpoints, std::size_t channels, std::vector<Coeffs> coeffs)
      : breakpoints_(std::move(breakpoints)), channels_(channels), coeffs_(std::move(coeffs)) {}

  std::size_t channels() const { return channels_; }
  double t_begin() const { return breakpoints_.front(); }
  double t_end() const { return breakpoints_.back(); }
  const std::vector<double>& breakpoints() const { return breakpoints_; }

  std::vector<double> eval(double t) const { return evaluate(t, 0); }
  std::vector<double> deriv(double t) const { return evaluate(t, 1); }
  std::vector<double> second_deriv(double t) const { return evaluate(t, 2); }

  /// Writes eval (order 0) or deriv (order 1) into out[0..channels).
  void evaluate_into(double t, int order, double* out) const {
    const auto [seg, s] = locate(t);
    for (std::size_t c = 0; c < channels_; ++c) {
      const Coeffs& k = coeffs_[seg * channels_ + c];
      switch (order) {
        case 0: out[c] = k[0] + s * (k[1] + s * (k[2] + s * k[3])); break;
        case 1: out[c] = k[1] + s * (2.0 * k[2] + 3.0 * s * k[3]); break;
        default: out[c] = 2.0 * k[2] + 6.0 * s * k[3]; break;
      }
    }
  }

 private:
  std::vector<double> evaluate(double t, int order) const {
    std::vector<double> out(channels_);
    evaluate_into(t, order, out.data());
    return out;
  }

  // Clamps t; at interior breakpoints the right-hand segment is used.
  std::pair<std::size_t, double> locate(double t) const {
    const std::size_t segments = breakpoints_.size() - 1;
    t = std::clamp(t, breakpoints_.front(), breakpoints_.back());
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
    std::size_t seg = static_cast<std::size_t>(it - breakpoints_.begin());
    seg = seg == 0 ? 0 : seg - 1;
    if (seg >= segments) seg = segments - 1;
    return {seg, t - breakpoints_[seg]};
  }

  std::vector<double> breakpoints_;
  std::size_t channels_ = 0;
  std::vector<Coeffs> coeffs_;  // segment-major
};

namespace detail {

// Second derivatives of the natural cubic spline (zero at both ends), Thomas algorithm.
inline std::vector<double> natural_second_derivatives(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  const std::size_t k = n - 2;  // interior unknowns
  std::vector<double> lower(k), diag(k), upper(k), rhs(k);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t[i] - t[i - 1], h1 = t[i + 1] - t[i];
    lower[i - 1] = h0;
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
  }
  for (std::size_t i = 1; i < k; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m[k] = rhs[k - 1] / diag[k - 1];
  for (std::size_t i = k - 1; i >= 1; --i) {
    m[i] = (rhs[i - 1] - upper[i - 1] * m[i + 1]) / diag[i - 1];
  }
  return m;
}

}  // namespace detail

/// Builds the time-augmented path (channel 0 = (t - t_0)/(t_n - t_0)) from the
/// missing-filled grid.
inline ControlledPath build_path(const IrregularSeries& series, PathScheme scheme) {
  const std::size_t n = series.length();
  if (n < 2) throw TooFewKnots("build_path: need at least 2 knots, got " + std::to_string(n));
  const std::vector<double> filled = fill_missing(series);
  const std::size_t d = series.channels, channels = d + 1;
  const std::vector<double>& t = series.times;
  const double span = t.back() - t.front();

  std::vector<double> tau(n);
  for (std::size_t k = 0; k < n; ++k) tau[k] = (t[k] - t.front()) / span;
  auto column = [&](std::size_t c) {
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) y[k] = c == 0 ? tau[k] : filled[k * d + (c - 1)];
    return y;
  };

  std::vector<ControlledPath::Coeffs> coeffs;
  if (scheme == PathScheme::rectilinear) {
    // Each interval splits at its midpoint: time advances while values hold, then
    // time holds while values move.
    std::vector<double> bp;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      bp.push_back(t[k]);
      bp.push_back(0.5 * (t[k] + t[k + 1]));
    }
    bp.push_back(t.back());
    coeffs.resize((bp.size() - 1) * channels);
    for (std::size_t c = 0; c < channels; ++c) {
      const auto y = column(c);
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double half = bp[2 * k + 1] - bp[2 * k];
        const double half2 = bp[2 * k + 2] - bp[2 * k + 1];
        const bool time = c == 0;
        coeffs[(2 * k) * channels + c] = {y[k], time ? (y[k + 1] - y[k]) / half : 0.0, 0.0, 0.0};
        coeffs[(2 * k + 1) * channels + c] = {time ? y[k + 1] : y[k], time ? 0.0 : (y[k + 1] - y[k]) / half2, 0.0, 0.0};
      }
    }
    return ControlledPath(std::move(bp), channels, std::move(coeffs));
  }

  coeffs.resize((n - 1) * channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto y = column(c);
    if (c == 0 || scheme == PathScheme::linear) {
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double h = t[k + 1] - t[k];
        coeffs[k * channels + c] = {y[k], c == 0 ? 1.0 / span : (y[k + 1] - y[k]) / h, 0.0, 0.0};
      }
    } else if (scheme == PathScheme::natural_cubic) {
      const auto m = detail::natural_second_derivatives(t, y);
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double h = t[k + 1] - t[k];
        coeffs[k * channels + c] = {y[k], (y[k + 1] - y[k]) / h - h * (2.0 * m[k] + m[k + 1]) / 6.0,
                                    0.5 * m[k], (m[k + 1] - m[k]) / (6.0 * h)};
      }
    } else {
      std::vector<double> slope(n, 0.0);
      for (std::size_t k = 1; k < n; ++k) slope[k] = (y[k] - y[k - 1]) / (t[k] - t[k - 1]);
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double h = t[k + 1] - t[k];
        const double delta = (y[k + 1] - y[k]) / h;
        coeffs[k * channels + c] = {y[k], slope[k], (3.0 * delta - 2.0 * slope[k] - slope[k + 1]) / h,
                                    (slope[k] + slope[k + 1] - 2.0 * delta) / (h * h)};
      }
    }
  }
  return ControlledPath(t, channels, std::move(coeffs));
}

inline std::vector<double> eval(const ControlledPath& path, double t) { return path.eval(t); }
inline std::vector<double> deriv(const ControlledPath& path, double t) { return path.deriv(t); }

/// Stacks eval (order 0) or deriv (order 1) of several paths at one time into [B, channels].
inline Tensor eval_batch(std::span<const ControlledPath* const> paths, double t, int order = 0) {
  if (paths.empty()) return Tensor::zeros(0, 0);
  const std::size_t c = paths.front()->channels();
  std::vector<double> out(paths.size() * c);
  for (std::size_t b = 0; b < paths.size(); ++b) paths[b]->evaluate_into(t, order, out.data() + b * c);
  return Tensor::from(paths.size(), c, std::move(out));
}

}  // namespace nsde
