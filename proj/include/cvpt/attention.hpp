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
#include <optional>
#include <string>
#include <vector>

#include "cvpt/graph.hpp"
#include "cvpt/tensor.hpp"

namespace cvpt {

enum class CaMode { kLiteral, kFull };

std::string to_string(CaMode mode);
CaMode parse_ca_mode(const std::string& text);

/// Multi-head self-attention weights, each d x d, applied as x W.
template <typename T>
struct SelfAttentionParams {
  Var<T> w_q, w_k, w_v, w_o;
  std::size_t heads = 1;
};

/// Cross-attention weights. Literal mode uses K = V = X2 W_K and adds no
/// output projection; full mode has its own W_V and W_O like self-attention.
template <typename T>
struct CrossAttentionParams {
  Var<T> w_q, w_k;
  std::optional<Var<T>> w_v, w_o;
  std::size_t heads = 1;
  CaMode mode = CaMode::kLiteral;
};

enum class AttentionKind { kSelf, kCross };

template <typename T>
struct AttentionRecord {
  std::size_t layer = 0;
  AttentionKind kind = AttentionKind::kSelf;
  std::size_t head = 0;
  /// Scaled logits before softmax.
  BasicTensor<T> logits;
  /// Softmax-normalized weights, one row per query.
  BasicTensor<T> weights;
};

/// Optional diagnostics hook threaded through the attention kernels. When
/// attached it records every head's score matrices; force_uniform_self
/// replaces self-attention logits with zeros so every row becomes uniform.
template <typename T>
struct AttentionProbe {
  std::vector<AttentionRecord<T>> records;
  bool record = true;
  bool force_uniform_self = false;
  std::size_t layer = 0;

  /// Head-averaged weights of the first matching record set, or empty.
  BasicTensor<T> mean_weights(std::size_t layer, AttentionKind kind) const;
};

template <typename T>
Var<T> self_attention(const Var<T>& x, const SelfAttentionParams<T>& p, AttentionProbe<T>* probe = nullptr);

/// x1 [n x d] queries, x2 [m x d] keys/values; output has x1's shape.
template <typename T>
Var<T> cross_attention(const Var<T>& x1, const Var<T>& x2, const CrossAttentionParams<T>& p,
                       AttentionProbe<T>* probe = nullptr);

enum class PromptLayout {
  kPromptsFirst,  // [P, E]
  kPromptsLast,   // [E, P]
  kAfterCls,      // [cls, P, patches], the VPT splice order
};

/// Four-block partition of one softmax-normalized (n+m) x (n+m) attention
/// matrix. mass_ee/mass_ep average over embedded query rows, mass_pe/mass_pp
/// over prompt query rows (zero when m == 0).
struct AttentionMassReport {
  std::size_t n_embedded = 0;
  std::size_t m_prompt = 0;
  double mass_ee = 0.0;
  double mass_ep = 0.0;
  double mass_pe = 0.0;
  double mass_pp = 0.0;
  std::vector<double> per_query_prompt_mass;
};

bool is_prompt_index(std::size_t index, std::size_t n, std::size_t m, PromptLayout layout);

template <typename T>
AttentionMassReport attention_mass_partition(const BasicTensor<T>& weights, std::size_t n, std::size_t m,
                                             PromptLayout layout);

}  // namespace cvpt
