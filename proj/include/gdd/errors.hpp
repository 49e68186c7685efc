#pragma once
#include <stdexcept>

namespace gdd {

// Bad user input: malformed config file, invalid CLI values, missing files
// named by the config. CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric failure at runtime: NaN/Inf loss, log of a non-positive value.
// Never silent; CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gdd
