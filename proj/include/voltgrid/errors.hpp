#pragma once

#include <stdexcept>
#include <string>

namespace voltgrid {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class TopologyError : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class SingularSystem : public Error {
public:
    using Error::Error;
};

class SingularJacobian : public Error {
public:
    using Error::Error;
};

class DivideByZero : public Error {
public:
    using Error::Error;
};

class AngleConditionViolated : public Error {
public:
    using Error::Error;
};

class NoFlipFound : public Error {
public:
    using Error::Error;
};

class FileError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

/// Iterative method ran out of budget. `value` is the last residual
/// (power flow) or the best objective seen (eigenvalue ascent).
class NoConvergence : public Error {
public:
    NoConvergence(const std::string& msg, int iterations_, double value_)
        : Error(msg), iterations(iterations_), value(value_) {}
    int iterations;
    double value;
};

}  // namespace voltgrid
