#pragma once

#include <stdexcept>
#include <string>

namespace iqgen {

// Invalid configuration value or schema violation. CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad argument to an operation (dimension mismatch, empty input, ...).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed record file; carries the 1-based line number.
struct ParseFileError : IoError {
    ParseFileError(const std::string& file, int line_no, const std::string& what)
        : IoError(file + ":" + std::to_string(line_no) + ": " + what), line(line_no) {}
    int line;
};

// Training-time failure (degenerate data, non-finite gradients, ...).
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace iqgen
