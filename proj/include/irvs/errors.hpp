#pragma once

#include <stdexcept>
#include <string>

namespace irvs {

// Dimension mismatch between an operand and what the callee expects.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Precondition violated (empty batch, out-of-range index, bad config...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed file contents. Messages carry the offending line number.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A Langevin chain produced a non-finite gradient.
struct SamplerError : std::runtime_error {
  SamplerError(const std::string& what, int iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration(iteration) {}
  int iteration;
};

}  // namespace irvs
