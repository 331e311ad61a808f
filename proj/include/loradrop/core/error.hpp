// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace loradrop {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent disagreement between tensors, adapters or configs.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared in a tensor.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or wrong-version file.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A value violates a documented contract (range, invariant, precondition).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Error raised by a pipeline stage; the message is prefixed with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace loradrop
