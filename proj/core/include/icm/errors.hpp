// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace icm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid argument values or configuration.
class ParameterError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// A value fell outside the domain where the computation is well conditioned.
class NumericalDomainError : public Error {
public:
    using Error::Error;
};

// Divergence or a non-finite quantity during optimization.
class TrainingError : public Error {
public:
    using Error::Error;
};

// A pipeline stage was started before the stage it depends on produced its artifacts.
class PrerequisiteError : public Error {
public:
    using Error::Error;
};

}  // namespace icm
