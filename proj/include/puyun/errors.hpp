#pragma once

#include <stdexcept>
#include <string>

namespace puyun {

// Error taxonomy shared by the library and the CLI exit-code mapping:
//   usage/config/shape -> exit 1, data -> exit 2, numeric -> exit 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

}  // namespace puyun
