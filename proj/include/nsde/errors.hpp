#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nsde {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised for malformed user input (configs, CSV rows, out-of-range labels).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class AbortNonFinite : public Error {
 public:
  using Error::Error;
};

class EmptyChannel : public Error {
 public:
  using Error::Error;
};

class TooFewKnots : public Error {
 public:
  using Error::Error;
};

class NegativeStateGSDE : public Error {
 public:
  using Error::Error;
};

/// A solve left the finite / bounded region. Carries the offending step and batch row.
class NumericalExplosion : public Error {
 public:
  NumericalExplosion(std::size_t step, std::size_t sample)
      : Error("numerical explosion at step " + std::to_string(step) + " (sample " +
              std::to_string(sample) + ")"),
        step_(step),
        sample_(sample) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::size_t step_;
  std::size_t sample_;
};

/// Training gave up after repeated batch-wide explosions.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::size_t epoch)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace nsde
