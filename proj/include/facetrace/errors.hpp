#pragma once

#include <stdexcept>
#include <string>

namespace facetrace {

// Error taxonomy maps onto process exit codes (see tools/facetrace.cpp):
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.
// ShapeError is a ConfigError: shape mismatches are contract violations at
// module boundaries, not runtime data faults.

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class ShapeError : public ConfigError {
public:
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace facetrace
