// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace datadream {

// Bad run setup (missing null embedding, empty prior set, host without
// attention layers, corpus/eval class overlap, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A persisted artifact failed verification (truncated record, hash mismatch).
struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unrecognized container magic or version.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data violates a contract (missing class, non-finite features).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Two artifacts cannot be combined (bank vs. model architecture).
struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// An experiment protocol precondition is broken (non-nested shot sets).
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace datadream
