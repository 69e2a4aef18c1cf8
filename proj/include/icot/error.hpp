#pragma once

#include <stdexcept>
#include <string>

namespace icot {

// Base for every error the library raises. The category lets the CLI map
// failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Image/grid dimensions or embedding widths that do not line up.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// A position or patch index outside the valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// API misuse: empty inputs, zero counts, unresolved placeholders.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed input files (PPM, demonstration JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A demonstration that fails structural validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Broken data-structure invariant (duplicate indices, negative scores).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Non-finite activations or logits.
class NumericError : public Error {
 public:
  using Error::Error;
};

class BootstrapError : public Error {
 public:
  using Error::Error;
};

}  // namespace icot
