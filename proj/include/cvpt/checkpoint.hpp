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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvpt/params.hpp"
#include "cvpt/tensor.hpp"

namespace cvpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kMetaTensorName[] = "__meta__";

/// Named float32 tensors plus a JSON metadata object.
///
/// Binary layout (all integers little-endian):
///   "CVPT" | version u32 | tensor count u32 |
///   per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank,
///               float32 data (IEEE-754 LE)
/// The metadata travels as the first tensor, "__meta__": rank 1, one element
/// per byte of the UTF-8 JSON text, each element holding the byte value.
struct Checkpoint {
  ParamStore<float> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint_file(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cvpt
