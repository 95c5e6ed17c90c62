#pragma once

#include <stdexcept>
#include <string>

namespace splitsim {

// Base class for everything thrown on purpose by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input: broken layout/config/species, inconsistent grids, missing wires.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Evaluation point outside the model's domain (on a conductor, zero-field
// direction, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Iterative method failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

// Time step too coarse for the potential/kinetic scales involved.
class StepSizeError : public Error {
public:
    using Error::Error;
};

// Grid too small / feature on the boundary / cloud expanded off the box.
class GridError : public Error {
public:
    using Error::Error;
};

// Input is outside the regime a reduced model needs (no double well, levels
// not isolated, ...).
class RegimeError : public Error {
public:
    using Error::Error;
};

} // namespace splitsim
