#pragma once

#include <stdexcept>
#include <string>

namespace fmrcc {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument: bad dimensions, grid mismatch, out-of-range parameter.
class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

/// Malformed or degenerate input data (parse failures, rank/degeneracy problems).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Non-finite or otherwise invalid numeric results.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Model fitting failed (all restarts aborted, no viable candidate).
class FitError : public Error {
public:
    explicit FitError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ArgumentError(msg);
}

}  // namespace fmrcc
