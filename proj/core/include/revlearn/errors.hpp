#pragma once

#include <stdexcept>
#include <string>

namespace revlearn {

// Fixed-point value does not fit the representable range.
struct RangeError : std::range_error {
  using std::range_error::range_error;
};

// Caller broke a documented precondition (shape mismatch, bad ratio, ...).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed dataset file or inconsistent dataset contents.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value surfaced during differentiation or training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// State mismatch between a forward pass and its reversal (buffer underflow,
// non-empty terminal buffer, checkpoint hash mismatch).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment config failed validation; message carries the field path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace revlearn
