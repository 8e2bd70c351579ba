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

#include <cstddef>
#include <string>
#include <vector>

#include "cvpt/model.hpp"

namespace cvpt {

struct ClsProfileRow {
  std::size_t prompt_count = 0;
  std::size_t layer = 0;
  double prompt_mass = 0.0;    ///< cls row, cls key excluded, renormalized
  double embedded_mass = 0.0;  ///< patch keys, same normalization
  double raw_prompt_mass = 0.0;  ///< cls row including the cls key
  double mass_ee = 0.0;          ///< mean embedded-query mass on embedded keys
};

struct ClsProfileOptions {
  bool force_uniform = false;
  /// Prompts for count m are the first m rows of one seeded stream, so the
  /// prompt sets are nested as m grows.
  std::uint64_t prompt_seed = 0;
};

/// For each prompt count, splices that many VPT-deep prompts into a copy of
/// `backbone` and reads the cls query row of the head-averaged self-attention
/// at `layer`. Count 0 runs the backbone unprompted.
std::vector<ClsProfileRow> cls_attention_profile(const Model<float>& backbone, const Tensor& image, std::size_t layer,
                                                 const std::vector<std::size_t>& prompt_counts,
                                                 const ClsProfileOptions& options = {});

/// Columns prompt_count,layer,prompt_mass,embedded_mass,raw_prompt_mass,mass_ee.
std::string cls_profile_csv(const std::vector<ClsProfileRow>& rows);

}  // namespace cvpt
