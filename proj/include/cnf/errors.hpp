#pragma once

#include <stdexcept>
#include <string>

namespace cnf {

/// Base class for all library errors. Subclasses map to CLI exit codes:
/// data/format problems exit 2, numerical failures exit 3.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor/layer dimension mismatch.
class shape_error : public error {
public:
    using error::error;
};

/// Bad dataset contents (labels out of range, empty sets, malformed files).
class data_error : public error {
public:
    using error::error;
};

/// Malformed config or CLI-provided text.
class parse_error : public error {
public:
    using error::error;
};

/// Structurally valid but semantically invalid configuration value.
class config_error : public error {
public:
    using error::error;
};

/// Filesystem failures.
class io_error : public error {
public:
    using error::error;
};

/// Non-finite losses, failed factorizations.
class numerical_error : public error {
public:
    using error::error;
};

/// API misuse detected at runtime (e.g. backward called without forward).
class contract_error : public error {
public:
    using error::error;
};

} // namespace cnf
