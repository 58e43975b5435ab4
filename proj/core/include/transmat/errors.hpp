#pragma once

#include <stdexcept>
#include <string>

namespace transmat {

/// Tensor or plane dimensions disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dataset, file, or decoding problem. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A trimap plane containing a value outside {0, 128, 255}.
class InvalidTrimapError : public DataError {
public:
    InvalidTrimapError(int value, int64_t y, int64_t x)
        : DataError("invalid trimap value " + std::to_string(value) + " at (" + std::to_string(y) +
                    "," + std::to_string(x) + "); expected one of 0, 128, 255"),
          value_(value), y_(y), x_(x) {}

    int value() const { return value_; }
    int64_t y() const { return y_; }
    int64_t x() const { return x_; }

private:
    int value_;
    int64_t y_;
    int64_t x_;
};

/// Crop requested on a sample whose trimap has no UNK pixel.
class NoUnknownRegionError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite loss or gradient. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or command-line usage. Maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace transmat
