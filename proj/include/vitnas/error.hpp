#pragma once

#include <stdexcept>
#include <string>

namespace vitnas {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config_error = 2,
    data_error = 3,
    numerical_abort = 4,
};

/// Invalid configuration: bad spec, bad range triple, unknown key, arch outside spec.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unreadable dataset/checkpoint/descriptor files, out-of-range labels.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands of a tensor operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or similar numerical failure during training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace vitnas
