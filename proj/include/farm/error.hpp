#pragma once

#include <stdexcept>
#include <string>

namespace farm {

/// Malformed input or configuration: bad shapes, out-of-range arguments,
/// unparsable files. The CLI maps this to exit code 2.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a valid answer (rank deficiency,
/// solver failure, degenerate test).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace farm
