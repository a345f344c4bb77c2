#pragma once

#include <stdexcept>
#include <string>

namespace attnconv {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input: bad files, labels out of range, impossible splits.
class DataError : public Error {
public:
    using Error::Error;
};

/// A loss or objective became non-finite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or call sequence (e.g. training attention that was never attached).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace attnconv
