#pragma once

#include <stdexcept>
#include <string>

namespace apo {

// Invalid input: out-of-vocabulary value, index out of range, malformed record.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lookup of an id that does not exist in a store.
struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value surfaced inside numeric code; message names the term.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace apo
