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
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cvpt/tensor.hpp"

namespace cvpt {

/// Insertion-ordered map of uniquely named tensors.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
  };

  void add(std::string name, BasicTensor<T> value);
  bool contains(std::string_view name) const;
  const BasicTensor<T>& at(std::string_view name) const;
  BasicTensor<T>& at(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t element_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Glob match where '*' matches any run of characters (including '.').
bool glob_match(std::string_view pattern, std::string_view text);

/// Names matching any pattern are trainable; everything else is frozen.
class FreezePolicy {
 public:
  FreezePolicy() = default;
  explicit FreezePolicy(std::vector<std::string> patterns) : patterns_(std::move(patterns)) {}

  bool trainable(std::string_view name) const;
  const std::vector<std::string>& patterns() const { return patterns_; }
  std::string describe() const;

  /// Classifier head only.
  static FreezePolicy linear_probe();
  /// Prompts and head; cross-attention stays frozen.
  static FreezePolicy prompts_and_head();
  /// Prompts, head, and every cross-attention projection.
  static FreezePolicy learnable_ca();
  static FreezePolicy everything();

 private:
  std::vector<std::string> patterns_;
};

struct ParamCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
};

template <typename T>
ParamCount count_params(const ParamStore<T>& params, const FreezePolicy& policy);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace cvpt
