#pragma once

#include <stdexcept>
#include <string>

namespace uncd {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor/layer shape mismatch; the message names the offending axis.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid configuration value (model config, CLI parameter, schedule).
struct ConfigError : Error {
    using Error::Error;
};

/// Bad data content: out-of-range class index, degenerate batch, empty dataset.
struct DataError : Error {
    using Error::Error;
};

/// Malformed or unsupported file content (checkpoint, PNG, manifest).
struct FormatError : Error {
    using Error::Error;
};

/// Filesystem failure (open/read/write).
struct IoError : Error {
    using Error::Error;
};

/// Metric requested on an empty pixel set.
struct MetricError : Error {
    using Error::Error;
};

/// Synthetic data generator could not satisfy its target.
struct GenerationError : Error {
    using Error::Error;
};

}  // namespace uncd
