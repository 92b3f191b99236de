#pragma once

#include <stdexcept>
#include <string>

namespace mt {

// Shape disagreement between tensors.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad hyperparameter or option value.
struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or out-of-range data (labels, token ids, files).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation applied to the wrong task/label kind.
struct ModeError : std::runtime_error {
    explicit ModeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or diverging optimization.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration file or experiment setup.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (e.g. backward on a non-scalar).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mt
