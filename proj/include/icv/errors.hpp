// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace icv {

// Root of every error thrown by the library. Each subsystem throws the most
// specific subclass so callers (and the CLI) can map failures to messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or extent disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Panel count / composite geometry problems.
class LayoutError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input that is syntactically valid but breaks a documented contract.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable or truncated file.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / adapter does not match the model it is applied to.
class StructureError : public Error {
 public:
  using Error::Error;
};

// Prompt grammar violation; position is a byte offset into the input text.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace icv
