#pragma once

#include <stdexcept>
#include <string>

namespace pinnbc {

/// Invalid user input: unknown names, out-of-range parameters, inconsistent
/// options. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, failed solves and similar. The CLI maps it to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A query point that lies outside the geometry it was asked about.
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Boundary data that disagree at a shared vertex.
class InconsistentBoundaryData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pinnbc
