#pragma once

#include <stdexcept>
#include <string>

namespace luq {

// Error families. The CLI maps them onto exit codes (usage 1, data 2,
// numeric 3); everything else in the library just throws.

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated precondition on an otherwise well-formed call (e.g. n < 2).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace luq
