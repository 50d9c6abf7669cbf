#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcft {

using Complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kFourPi = 4.0 * std::numbers::pi;
/// Additive constant of the round-metric Green function.
inline constexpr double kGreenConstant = std::numbers::ln2 - 0.5;

/// Base of all library errors. `field()` names the offending parameter
/// (a dotted path when it comes from a config file).
class Error : public std::runtime_error {
  public:
    Error(const std::string& what, std::string field = {})
        : std::runtime_error(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

/// Invalid parameters or configuration (bad gamma, L_max < 1, short schedules).
class ConfigError : public Error {
    using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
    using Error::Error;
};

/// Seiberg bounds violated. `indices()` lists the offending momenta for a
/// local bound violation and is {-1} for the total charge bound.
class SeibergError : public PreconditionError {
  public:
    SeibergError(const std::string& what, std::vector<int> indices)
        : PreconditionError(what, "momenta"), indices_(std::move(indices)) {}
    int index() const noexcept { return indices_.empty() ? -1 : indices_.front(); }
    const std::vector<int>& indices() const noexcept { return indices_; }
    bool total_charge() const noexcept { return index() < 0; }

  private:
    std::vector<int> indices_;
};

/// A discretisation is too coarse for the requested quantity.
class ResolutionError : public PreconditionError {
    using PreconditionError::PreconditionError;
};

/// Evaluation hit a singular point or a non-finite value.
class DomainError : public Error {
    using Error::Error;
};

/// Monte Carlo or quadrature output is numerically meaningless.
class DegeneracyError : public Error {
    using Error::Error;
};

}  // namespace lcft
