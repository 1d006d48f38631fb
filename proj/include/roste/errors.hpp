#pragma once

#include <stdexcept>
#include <string>

namespace roste {

// Operand shapes do not compose (inner dimensions, chained layers, batches).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input outside the domain of an operation (NaN/Inf, bad bit-width, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Rotation requested for a dimension the Walsh-Hadamard construction cannot cover.
class UnsupportedDimension : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// API misuse: stale tapes, empty calibration sets, refused searches.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace roste
