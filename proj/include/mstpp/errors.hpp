#pragma once

#include <stdexcept>
#include <string>

namespace mstpp {

// Bad shapes or extents passed to an operation.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file contents.
class CorruptionError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Non-finite values during optimization.
class DivergenceError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace mstpp
