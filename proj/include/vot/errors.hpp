#pragma once

#include <stdexcept>
#include <string>

namespace vot {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape or dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid model/scene/experiment configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values or other numeric failures.
struct NumericsError : Error {
    using Error::Error;
};

// On-disk format violations (bad magic, truncation, size mismatch).
struct FormatError : Error {
    using Error::Error;
};

// Target never detected in a clip.
struct TrackingError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace vot
