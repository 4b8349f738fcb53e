#pragma once

#include <stdexcept>
#include <string>

namespace ftn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid tree shape or bond dimensions.
class TopologyError : public Error {
public:
    using Error::Error;
};

/// A QR factor lost rank during retraction or re-orthonormalization.
class DegenerateStepError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a failed numerical procedure.
class NumericalError : public Error {
public:
    using Error::Error;
};

class LineSearchError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Malformed input file.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace detail
}  // namespace ftn
