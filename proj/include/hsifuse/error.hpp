#pragma once

#include <stdexcept>
#include <string>

namespace hsifuse {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible or an axis is out of range.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf was produced or supplied where finite values are required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Caller violated an API precondition (e.g. backward from a non-scalar).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk artifact. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, long long offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    long long offset() const noexcept { return offset_; }

private:
    long long offset_;
};

/// A metric has no defined value for the given inputs.
class MetricUndefined : public Error {
public:
    using Error::Error;
};

}  // namespace hsifuse
