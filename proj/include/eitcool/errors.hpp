#pragma once

#include <stdexcept>
#include <string>

namespace eitcool {

/// Malformed input, schema violation or invalid parameter combination.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure failed: no convergence, singular system, invariant
/// violated beyond tolerance.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The request is well formed but physically meaningless in the given regime,
/// e.g. a steady state queried while the mode is being heated.
class RegimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace eitcool
