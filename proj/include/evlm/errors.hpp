#pragma once

#include <stdexcept>
#include <string>

namespace evlm {

// Error hierarchy shared by all modules. The CLI maps each class to a
// distinct exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or ranks.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Out-of-range axis, index, or token id.
class IndexError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite math is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed binary or JSON payloads (codec, checkpoint, manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (schema violations, bad stage setup).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures, always carrying the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

/// External judge endpoint unreachable or reply unusable.
class JudgeError : public Error {
public:
    using Error::Error;
};

} // namespace evlm
