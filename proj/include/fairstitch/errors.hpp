#pragma once

#include <stdexcept>
#include <string>

namespace fairstitch {

// Base class for every error raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatch; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// API misuse: violated precondition that is not a shape or range issue.
struct ContractError : Error {
    using Error::Error;
};

// Index or position outside its permitted interval.
struct RangeError : Error {
    using Error::Error;
};

// A sensitive-attribute group or (label, attribute) cell is empty.
struct EmptyGroupError : Error {
    using Error::Error;
};

// A split is unusable for the requested metric (e.g. single-class).
struct DegenerateSplitError : Error {
    using Error::Error;
};

// Invalid configuration value; message carries the field path.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input data; message carries row/column coordinates.
struct ParseError : Error {
    using Error::Error;
};

// Checkpoint file is unreadable, truncated, or internally inconsistent.
struct CheckpointError : Error {
    using Error::Error;
};

// Training objective became non-finite or exceeded the guard bound.
struct DivergenceError : Error {
    using Error::Error;
};

// Filesystem failure outside checkpoint validation.
struct IoError : Error {
    using Error::Error;
};

} // namespace fairstitch
