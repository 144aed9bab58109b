// Error types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace posekit {

/// Base class for all domain errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Quaternion with (near-)zero norm where a rotation was required.
class DegenerateQuaternion : public Error {
public:
    using Error::Error;
};

/// Input geometry does not admit the requested fit (too few points,
/// collinear samples, rank-deficient design matrix, ...).
class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

/// 3D point does not project in front of the camera.
class BehindCamera : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries a line number when the format is textual.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg, long line = -1)
        : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

/// Keypoint or index outside the valid image/grid area.
class OutOfBounds : public Error {
public:
    using Error::Error;
};

/// Tensor dimensions inconsistent with the network configuration.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A forward trace was produced by a different parameter version.
class TraceMismatch : public Error {
public:
    using Error::Error;
};

/// Not enough data to compute the requested statistic.
class InsufficientData : public Error {
public:
    using Error::Error;
};

/// NaN or infinity encountered where finite values are required.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace posekit
