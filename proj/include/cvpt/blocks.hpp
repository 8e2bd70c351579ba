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

#include <optional>
#include <string>

#include "cvpt/attention.hpp"
#include "cvpt/graph.hpp"

namespace cvpt {

enum class BlockVariant { kPlain, kVpt, kCvpt };
enum class VptMode { kShallow, kDeep };

std::string to_string(BlockVariant v);
std::string to_string(VptMode m);

/// Where VPT-deep prompt rows are removed. kAfterBlock is the reference
/// behaviour; kAfterAttention drops them before the MLP; kBeforeAttention never
/// lets them into the block and serves as a negative control.
enum class PromptDrop { kAfterBlock, kAfterAttention, kBeforeAttention };

template <typename T>
struct LayerNormParams {
  Var<T> gamma, beta;
};

/// d -> 4d -> d with GELU.
template <typename T>
struct MlpParams {
  Var<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderBlockParams {
  LayerNormParams<T> ln1, ln2;
  SelfAttentionParams<T> sa;
  MlpParams<T> mlp;
  std::optional<CrossAttentionParams<T>> ca;
  /// m x d prompt matrix for this block (VPT deep, CVPT, or the shared
  /// shallow set on the first block).
  std::optional<Var<T>> prompts;
  BlockVariant variant = BlockVariant::kPlain;
  /// CVPT insertion point, 1..5:
  ///   1  x <- x + CA(x, P) before the block
  ///   2  X1 = x + SA(LN1 x) + CA(LN1 x, P)
  ///   3  X1 = x + SA(LN1 x); X2 = X1 + CA(X1, P)          (default)
  ///   4  out = X1 + MLP(LN2 X1) + CA(LN2 X1, P)
  ///   5  out = X2 + CA(X2, P) with X2 the plain block output
  int ca_position = 3;
};

template <typename T>
struct BlockContext {
  AttentionProbe<T>* probe = nullptr;
  std::size_t layer = 0;
};

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& p);

/// Pre-norm ViT block: x + SA(LN1 x), then + MLP(LN2 .).
template <typename T>
Var<T> plain_block(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx = {});

/// Token sequence between VPT blocks. `carried` holds the shallow prompt rows
/// that propagate from block to block; deep mode never sets it.
template <typename T>
struct VptState {
  Var<T> tokens;
  std::optional<Var<T>> carried;
};

/// Splices prompts between the cls row and the patch rows, runs the block on
/// t + m tokens and returns the t non-prompt rows. Deep mode takes fresh
/// prompts from `p`; shallow mode takes them from `p` on the first block and
/// from `in.carried` afterwards, and carries the prompt outputs forward.
template <typename T>
VptState<T> vpt_block(const VptState<T>& in, const EncoderBlockParams<T>& p, VptMode mode, bool first_block,
                      const BlockContext<T>& ctx = {}, PromptDrop drop = PromptDrop::kAfterBlock);

template <typename T>
Var<T> vpt_block_deep(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx = {},
                      PromptDrop drop = PromptDrop::kAfterBlock) {
  return vpt_block(VptState<T>{x, std::nullopt}, p, VptMode::kDeep, false, ctx, drop).tokens;
}

/// Prompts reach the tokens only through a residual cross-attention term; the
/// token count never changes.
template <typename T>
Var<T> cvpt_block(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx = {});

}  // namespace cvpt
