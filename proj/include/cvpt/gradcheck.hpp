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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cvpt/graph.hpp"
#include "cvpt/tensor.hpp"

namespace cvpt {

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> value;
  bool trainable = true;
};

/// Builds a scalar loss on `g` from the bound parameters (same order as given).
template <typename T>
using LossFn = std::function<Var<T>(Graph<T>& g, std::span<const Var<T>> params)>;

struct GradCheckOptions {
  /// Central-difference step; must lie in [1e-4, 1e-2].
  double step = 1e-3;
  double tolerance = 1e-4;
  /// rel = |tape - fd| / max(|tape|, |fd|, abs_floor)
  double abs_floor = 1e-6;
  /// 0 checks every element; otherwise a seeded subset of this many per tensor.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  bool frozen = false;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  double loss = 0.0;
  std::vector<GradCheckEntry> entries;
  bool passed = true;

  const GradCheckEntry& entry(const std::string& name) const;
  std::string summary() const;
};

double relative_error(double tape, double numeric, double abs_floor);

/// Compares tape gradients against central differences for every trainable
/// parameter. Frozen parameters are bound without gradients and reported as
/// frozen (a tape gradient reaching them fails the check). Parameters are
/// restored bit-exactly before returning.
template <typename T>
GradCheckReport grad_check(const LossFn<T>& f, std::vector<NamedParam<T>>& params, const GradCheckOptions& options);

}  // namespace cvpt
