// Copyright 2026 The CVPT Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cvpt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A kernel produced NaN/Inf, or a loss became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint or dataset container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A freeze policy was violated (gradient for a frozen tensor, frozen tensor mutated).
class PolicyError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Lookup of a named tensor that does not exist.
class MissingTensorError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvpt
