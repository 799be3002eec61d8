#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nsde/errors.hpp"
#include "nsde/rng.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

/// Materialised increments of one d-dimensional Brownian path on a uniform grid.
/// Increment (k, j) is sqrt(dt) * counter_normal(seed, k, j), so any entry can be
/// regenerated in isolation.
struct BrownianGrid {
  std::uint64_t seed = 0;
  std::size_t n_steps = 0;
  std::size_t dim = 0;
  double dt = 0.0;
  std::vector<double> increments;  // n_steps x dim

  double at(std::size_t k, std::size_t j) const { return increments[k * dim + j]; }
};

inline BrownianGrid sample_brownian(std::uint64_t seed, std::size_t n_steps, std::size_t dim, double dt) {
  if (n_steps == 0 || dim == 0) throw ValidationError("sample_brownian: n_steps and dim must be >= 1");
  if (!(dt > 0.0)) throw ValidationError("sample_brownian: dt must be positive");
  BrownianGrid g{seed, n_steps, dim, dt, std::vector<double>(n_steps * dim)};
  const double scale = std::sqrt(dt);
  for (std::size_t k = 0; k < n_steps; ++k) {
    for (std::size_t j = 0; j < dim; ++j) g.increments[k * dim + j] = scale * counter_normal(seed, k, j);
  }
  return g;
}

/// One independent path per batch row, generated lazily on a fine grid. A solver
/// running `aggregate` fine steps per coarse step receives their sums, so every
/// refinement level sees the same underlying path.
class BrownianBatch {
 public:
  BrownianBatch() = default;
  BrownianBatch(std::vector<std::uint64_t> seeds, std::size_t dim, double dt, std::size_t n_steps)
      : seeds_(std::move(seeds)), dim_(dim), dt_(dt), n_steps_(n_steps), scale_(std::sqrt(dt)) {}

  static BrownianBatch from_grid(const BrownianGrid& g) { return BrownianBatch({g.seed}, g.dim, g.dt, g.n_steps); }

  std::size_t batch() const { return seeds_.size(); }
  std::size_t dim() const { return dim_; }
  double dt() const { return dt_; }
  std::size_t n_steps() const { return n_steps_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  /// Increments of coarse step k: [batch, dim].
  Tensor increment(std::size_t k, std::size_t aggregate = 1) const {
    std::vector<double> out(seeds_.size() * dim_, 0.0);
    for (std::size_t b = 0; b < seeds_.size(); ++b) {
      for (std::size_t j = 0; j < dim_; ++j) {
        double acc = 0.0;
        for (std::size_t m = k * aggregate; m < (k + 1) * aggregate; ++m) {
          acc += scale_ * counter_normal(seeds_[b], m, j);
        }
        out[b * dim_ + j] = acc;
      }
    }
    return Tensor::from(seeds_.size(), dim_, std::move(out));
  }

 private:
  std::vector<std::uint64_t> seeds_;
  std::size_t dim_ = 0;
  double dt_ = 0.0;
  std::size_t n_steps_ = 0;
  double scale_ = 0.0;
};

}  // namespace nsde
