#pragma once

#include <stdexcept>
#include <string>

namespace trips {

// Base of every error the library throws. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN or Inf produced or consumed by a kernel.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or out-of-range argument.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Guidance that cannot produce a usable score distribution.
class DegenerateGuidance : public Error {
public:
    using Error::Error;
};

// File or stream failure, including malformed file contents.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace trips
