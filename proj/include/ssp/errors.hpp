#pragma once

#include <stdexcept>
#include <string>

namespace ssp {

/// Invalid configuration, shape, or argument. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array shapes that do not line up with what an operation expects.
class ShapeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// A PDE kind the requested operation cannot handle.
class UnsupportedKindError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Non-finite values appeared during a solve, rollout or optimization. Exit code 3.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be read, written or parsed. Exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ssp
