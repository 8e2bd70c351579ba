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

#include "cvpt/params.hpp"

#include "cvpt/error.hpp"

namespace cvpt {

template <typename T>
void ParamStore<T>::add(std::string name, BasicTensor<T> value) {
  if (index_.count(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::size_t ParamStore<T>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw MissingTensorError("no tensor named '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
const BasicTensor<T>& ParamStore<T>::at(std::string_view name) const {
  return entries_[index_of(name)].value;
}

template <typename T>
BasicTensor<T>& ParamStore<T>::at(std::string_view name) {
  return entries_[index_of(name)].value;
}

template <typename T>
std::size_t ParamStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool FreezePolicy::trainable(std::string_view name) const {
  for (const auto& pat : patterns_) {
    if (glob_match(pat, name)) return true;
  }
  return false;
}

std::string FreezePolicy::describe() const {
  std::string s;
  for (const auto& p : patterns_) {
    if (!s.empty()) s += '|';
    s += p;
  }
  return s.empty() ? "<none>" : s;
}

FreezePolicy FreezePolicy::linear_probe() { return FreezePolicy({"head.*"}); }
FreezePolicy FreezePolicy::prompts_and_head() { return FreezePolicy({"head.*", "*prompts"}); }
FreezePolicy FreezePolicy::learnable_ca() { return FreezePolicy({"head.*", "*prompts", "blocks.*.ca.*"}); }
FreezePolicy FreezePolicy::everything() { return FreezePolicy({"*"}); }

template <typename T>
ParamCount count_params(const ParamStore<T>& params, const FreezePolicy& policy) {
  ParamCount c;
  for (const auto& e : params.entries()) {
    c.total += e.value.size();
    if (policy.trainable(e.name)) c.trainable += e.value.size();
  }
  return c;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamCount count_params(const ParamStore<float>&, const FreezePolicy&);
template ParamCount count_params(const ParamStore<double>&, const FreezePolicy&);

}  // namespace cvpt
