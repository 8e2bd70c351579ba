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
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvpt/tensor.hpp"

namespace cvpt {

/// Images [N x H x W x C] with pixel values in [0, 1] and one label per image.
struct LabeledSet {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  /// Copy of image i as [H x W x C].
  Tensor image(std::size_t i) const;
  /// Throws InputError when a structural invariant does not hold.
  void validate() const;
};

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t per_class = 50;
  double difficulty = 0.0;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  /// Label c uses the signature of class c + class_offset, so disjoint
  /// families of patterns can share label ids.
  std::size_t class_offset = 0;
};

/// Class-conditional gratings. Each class has a fixed signature independent
/// of the seed: orientation, spatial frequency, color tint and a mean color
/// offset. Per sample the phase is random; difficulty scales orientation and
/// frequency jitter, brightness jitter and pixel noise, and shrinks the mean
/// color offset, so at high difficulty the class must be read from texture.
/// Samples are emitted class-interleaved (label i % classes).
LabeledSet synth_generate(const SynthSpec& spec);

/// Parses "synth:<classes>x<per_class>@<difficulty>#<seed>". The "#<seed>"
/// part is optional and defaults to `default_seed`.
SynthSpec parse_synth_spec(const std::string& text, std::uint64_t default_seed = 0);

/// A "synth:..." spec or a path to a file written by save_set.
LabeledSet load_data(const std::string& spec, std::uint64_t default_seed = 0);

/// Stored in the checkpoint container as tensors "images" and "labels".
void save_set(const LabeledSet& set, const std::filesystem::path& path);
LabeledSet load_set(const std::filesystem::path& path);

/// Index batches covering [0, n) exactly once. Shuffled with a Fisher-Yates
/// permutation drawn from `seed`; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 bool shuffle);

/// First `count` samples (in stored order) of a set.
LabeledSet take(const LabeledSet& set, std::size_t count);

}  // namespace cvpt
