#pragma once

#include <stdexcept>
#include <string>

namespace latoracle {

// Malformed or inconsistent user input (bad PLF, bad config, unknown ids).
// The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A lattice that violates a structural invariant (cycle, dead start, ...).
class LatticeError : public InputError {
public:
    using InputError::InputError;
};

// The oracle could not produce a continuation (no final state reachable).
class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace latoracle
