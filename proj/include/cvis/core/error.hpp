#pragma once

#include <stdexcept>
#include <string>

namespace cvis {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Invalid parameters at construction time (non-SPD covariance, bad weights, ...).
class ConstructionError : public Error {
public:
    using Error::Error;
};

/// A proposal density evaluates to zero where the target does not.
class UnsupportedPoint : public Error {
public:
    using Error::Error;
};

class IntractableTarget : public Error {
public:
    using Error::Error;
};

class DegenerateResponsibility : public Error {
public:
    using Error::Error;
};

class EmDegenerate : public Error {
public:
    using Error::Error;
};

class DegenerateCovariance : public Error {
public:
    using Error::Error;
};

class SingularSystem : public Error {
public:
    using Error::Error;
};

class InvalidRatio : public Error {
public:
    using Error::Error;
};

class BoundViolated : public Error {
public:
    using Error::Error;
};

class InfeasibleTarget : public Error {
public:
    using Error::Error;
};

class UndefinedRange : public Error {
public:
    using Error::Error;
};

class AssemblyError : public Error {
public:
    using Error::Error;
};

class OutOfDomain : public Error {
public:
    using Error::Error;
};

class InsufficientTailMass : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

} // namespace cvis
