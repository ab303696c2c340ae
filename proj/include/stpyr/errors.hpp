// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace stpyr {

/// Invalid schedule, model or experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or volume dimensions that do not agree.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated binary artifact.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stpyr
