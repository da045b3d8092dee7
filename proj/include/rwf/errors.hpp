#pragma once

#include <stdexcept>

namespace rwf {

// Raised whenever a numeric kernel would produce NaN/Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad shapes, unknown keys, out-of-range values).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rwf
