#pragma once

// Empirical Wasserstein-1 distances and rank correlation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "nsde/errors.hpp"
#include "nsde/rng.hpp"

namespace nsde {

struct WassersteinEstimate {
  double value = 0.0;
  std::string method;          // "sorted-1d" or "sliced"
  std::size_t n_projections = 0;
  std::size_t n_a = 0, n_b = 0;
  bool resampled = false;      // the larger sample was cut down to the smaller size
  double se = 0.0;             // spread over projections (sliced only)
};

namespace detail {

// Seeded subset of `v` of size n, without replacement.
inline std::vector<double> subsample(const std::vector<double>& v, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = v[idx[i]];
  return out;
}

inline double sorted_gap(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace detail

/// Exact empirical W1 in one dimension: mean gap between sorted samples.
inline WassersteinEstimate w1_sorted(const std::vector<double>& a, const std::vector<double>& b,
                                     std::uint64_t resample_seed = 0) {
  if (a.empty() || b.empty()) throw ValidationError("w1: empty sample");
  WassersteinEstimate est;
  est.method = "sorted-1d";
  est.n_a = a.size();
  est.n_b = b.size();
  if (a.size() == b.size()) {
    est.value = detail::sorted_gap(a, b);
  } else {
    est.resampled = true;
    const std::size_t n = std::min(a.size(), b.size());
    est.value = a.size() > n ? detail::sorted_gap(detail::subsample(a, n, resample_seed), b)
                             : detail::sorted_gap(a, detail::subsample(b, n, resample_seed));
  }
  return est;
}

/// Sliced W1 between row-major n x dim sample matrices: the mean of w1_sorted over
/// `n_proj` seeded directions uniform on the sphere. For dim = 1 it is w1_sorted.
inline WassersteinEstimate w1_sliced(const std::vector<double>& A, const std::vector<double>& B, std::size_t dim,
                                     std::size_t n_proj = 50, std::uint64_t seed = 0) {
  if (dim == 0) throw ValidationError("w1_sliced: dim must be >= 1");
  if (A.size() % dim != 0 || B.size() % dim != 0) throw ShapeError("w1_sliced: sample size not a multiple of dim");
  const std::size_t na = A.size() / dim, nb = B.size() / dim;
  if (dim == 1) return w1_sorted(A, B, seed);
  if (n_proj == 0) throw ValidationError("w1_sliced: need at least one projection");
  WassersteinEstimate est;
  est.method = "sliced";
  est.n_projections = n_proj;
  est.n_a = na;
  est.n_b = nb;
  Rng rng(seed);
  std::vector<double> u(dim), pa(na), pb(nb), per(n_proj);
  for (std::size_t p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : u) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : u) x /= norm;
    for (std::size_t i = 0; i < na; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += A[i * dim + j] * u[j];
      pa[i] = acc;
    }
    for (std::size_t i = 0; i < nb; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += B[i * dim + j] * u[j];
      pb[i] = acc;
    }
    const auto one = w1_sorted(pa, pb, derive_seed(seed, {p}));
    est.resampled = est.resampled || one.resampled;
    per[p] = one.value;
  }
  const double mean = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(n_proj);
  double var = 0.0;
  for (double v : per) var += (v - mean) * (v - mean);
  est.value = mean;
  est.se = n_proj > 1 ? std::sqrt(var / static_cast<double>(n_proj - 1) / static_cast<double>(n_proj)) : 0.0;
  return est;
}

/// Ranks starting at 1; tied values share their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return rank;
}

/// Spearman rank correlation; 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman: need two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace nsde
