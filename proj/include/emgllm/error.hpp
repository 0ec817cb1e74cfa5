// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace emgllm {

// Every error carries a stable class name so the CLI can print a
// machine-parsable "error: <Class>: <message>" line.
class Error : public std::runtime_error {
   public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

   private:
    std::string kind_;
};

// Shape or precondition violation by a caller.
class ContractError : public Error {
   public:
    explicit ContractError(const std::string& message) : Error("ContractViolation", message) {}
};

// Invalid configuration value.
class ParameterError : public Error {
   public:
    explicit ParameterError(const std::string& message) : Error("ParameterError", message) {}
};

// Malformed file contents (manifest, checkpoint, config).
class SchemaError : public Error {
   public:
    explicit SchemaError(const std::string& message) : Error("SchemaError", message) {}
};

class IoError : public Error {
   public:
    explicit IoError(const std::string& message) : Error("IoError", message) {}
};

// A prerequisite artifact produced by another command is absent.
class MissingArtifactError : public Error {
   public:
    explicit MissingArtifactError(const std::string& message) : Error("MissingArtifact", message) {}
};

// NaN/Inf during training, or similar numerical breakdown.
class NumericError : public Error {
   public:
    explicit NumericError(const std::string& message) : Error("NumericError", message) {}
};

}  // namespace emgllm
