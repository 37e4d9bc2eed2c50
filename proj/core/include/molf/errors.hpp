// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace molf {

// Root of the library's exception hierarchy. The CLI maps subclasses onto
// exit codes (see tools/), everything else reports through what().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, k > N, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// On-disk content is well-formed but inconsistent (manifest shapes, labels).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Checksum mismatch, truncation, bad magic.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Missing checkpoint, wrong stage tag, invalid config field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

#define MOLF_EXPECT(cond, msg)                              \
  do {                                                      \
    if (!(cond)) throw ::molf::ContractViolation(msg);      \
  } while (false)

}  // namespace molf
