#pragma once

#include <stdexcept>
#include <string>

namespace duet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch between operands.
struct ShapeError : Error {
    using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

/// A function expected to be deterministic produced two different results.
struct DeterminismError : Error {
    using Error::Error;
};

/// Invalid configuration value or malformed config file.
struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Malformed data: dangling references, empty attribute sets, unknown tokens.
struct DataError : Error {
    using Error::Error;
};

/// Optimizer step rejected (non-finite gradients); parameters unchanged.
struct PoisonedStepError : Error {
    using Error::Error;
};

}  // namespace duet
