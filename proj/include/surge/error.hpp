#pragma once

#include <stdexcept>
#include <string>

namespace surge {

// Error taxonomy used across the library. Each maps to one failure class a
// caller can act on; the CLI turns any of these into a nonzero exit status.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Violated call contract (image too small, empty manifest, bad factor, ...).
struct PreconditionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Raster file could not be parsed at all.
struct DecodeError : Error {
    using Error::Error;
};

// Raster parsed but uses an unsupported encoding (bit depth, compression).
struct FormatError : Error {
    using Error::Error;
};

// NaN/Inf appeared inside an iterative solve; message names the iteration.
struct NumericalError : Error {
    using Error::Error;
};

// Checkpoint file damaged: truncated, or block layout inconsistent.
struct IntegrityError : Error {
    using Error::Error;
};

struct VersionError : Error {
    using Error::Error;
};

}  // namespace surge
