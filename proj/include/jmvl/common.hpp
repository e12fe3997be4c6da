#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace jmvl {

inline constexpr const char* kVersion = "0.1.0";

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

/// Raised when a primitive produces a NaN/Inf, or a gradient goes non-finite.
struct NumericsError : Error {
    using Error::Error;
};

struct ParseError : Error {
    std::size_t position;
    ParseError(const std::string& msg, std::size_t pos)
        : Error(msg + " at position " + std::to_string(pos)), position(pos) {}
};

struct SupportError : Error {
    using Error::Error;
};

struct RangeError : Error {
    using Error::Error;
};

struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t off)
        : Error(msg + " at byte offset " + std::to_string(off)), offset(off) {}
};

struct ConfigError : Error {
    using Error::Error;
};

struct InputError : Error {
    using Error::Error;
};

struct UnsupportedOperation : Error {
    using Error::Error;
};

struct UnsupportedLayer : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace jmvl
