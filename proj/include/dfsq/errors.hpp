#pragma once

#include <stdexcept>
#include <string>

namespace dfsq {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration detected before any compute (bad strategy/config pairing, unknown key).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, failed gradient checks, undefined numerics (zero vectors, empty masks).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfsq
