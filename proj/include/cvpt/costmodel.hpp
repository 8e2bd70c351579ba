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
#include <string>
#include <vector>

#include "cvpt/attention.hpp"
#include "cvpt/blocks.hpp"
#include "cvpt/graph.hpp"
#include "cvpt/model.hpp"

namespace cvpt {

// Matmul FLOPs, counting a multiply-add as 2. Head counts do not change the
// totals: per-head score and weighted-sum products add up to the full-width
// ones.

/// Self-attention over n+m tokens: projections 8(n+m)d^2, scores and
/// weighted sum 4(n+m)^2 d.
std::uint64_t flops_vpt_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads);
/// The 4(n+m)^2 d score/weighted-sum part of flops_vpt_attention.
std::uint64_t flops_vpt_scores(std::uint64_t n, std::uint64_t m, std::uint64_t d);
/// Cross-attention of n queries over m prompts. literal: 2nd^2 + 2md^2 + 4nmd;
/// full adds 2md^2 (W_V) + 2nd^2 (W_O).
std::uint64_t flops_cross_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads,
                                    CaMode mode);
/// Self-attention over the n embedded tokens plus cross-attention to m prompts.
std::uint64_t flops_cvpt_block(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads, CaMode mode);
/// Two-layer MLP with hidden width 4d over t tokens: 16 t d^2.
std::uint64_t flops_mlp(std::uint64_t t, std::uint64_t d);
std::uint64_t flops_patch_embed(std::uint64_t patches, std::uint64_t patch_dim, std::uint64_t d);
std::uint64_t flops_head(std::uint64_t d, std::uint64_t classes);

/// Size parameters of a cost evaluation; decoupled from image geometry so
/// that large settings (n=197, d=768) can be evaluated without building them.
struct CostShape {
  std::string variant = "plain";  ///< plain | vpt-shallow | vpt-deep | cvpt
  std::size_t n = 17;             ///< embedded tokens (patches + cls)
  std::size_t m = 0;
  std::size_t d = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t ca_heads = 1;
  CaMode ca_mode = CaMode::kLiteral;
  std::size_t patch_dim = 192;
  std::size_t num_classes = 10;

  static CostShape from_config(const ViTConfig& c);
};

struct CostReport {
  CostShape shape;
  std::uint64_t attn_flops = 0;   ///< per block: SA (VPT: over n+m) or SA + CA (CVPT)
  std::uint64_t block_flops = 0;  ///< per block: attention plus MLP
  std::uint64_t total_flops = 0;  ///< patch embedding + depth blocks + head
  std::uint64_t trainable_params = 0;  ///< default policy: prompts and head (head only for plain)
  std::uint64_t act_mem_bytes = 0;
};

/// Activation memory model. Every op output stays on the tape until the
/// backward pass (straight-line execution, nothing freed early), so the peak
/// equals the sum of op outputs; parameters and input constants are excluded.
/// Per op outputs, in float elements, for t tokens, h heads:
///   layer norm, residual add, row slices/concats: their output size
///   self-attention: q,k,v 3td; per-head column slices 3td (h > 1);
///                   per head logits, scaled logits, softmax 3t^2;
///                   weighted sums td; concat td (h > 1); W_O td
///   cross-attention (n queries, m prompts, hc heads): q nd, k md, per-head
///                   slices (n+2m)d (hc > 1); 3nm per head; sums nd;
///                   concat nd (hc > 1); full mode adds v md and W_O nd
///   MLP: fc1 product, bias, GELU 12td; fc2 product, bias 2td
/// The analytic total equals Graph::activation_bytes() after one forward.
std::uint64_t activation_elements_self_attention(std::uint64_t t, std::uint64_t d, std::uint64_t heads);
std::uint64_t activation_elements_cross_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d,
                                                  std::uint64_t heads, CaMode mode);
std::uint64_t activation_elements_block(const CostShape& s, std::size_t block);
std::uint64_t activation_bytes_forward(const CostShape& s);

CostReport cost_report(const CostShape& s);

/// Instrumented single-block run on a random input (seeded) for comparison
/// with the analytic formulas.
struct MeasuredBlock {
  FlopCounter flops;
  std::size_t activation_bytes = 0;
};
MeasuredBlock measure_block(const CostShape& s, std::uint64_t seed);

/// Least-squares polynomial fit.
struct PolyFit {
  std::vector<double> coeffs;  ///< lowest order first
  double r2 = 0.0;
};
PolyFit poly_fit(const std::vector<double>& x, const std::vector<double>& y, std::size_t degree);

/// True when the integer points lie exactly on a polynomial of the given
/// degree: every divided difference of order degree+1 vanishes, evaluated in
/// exact rational arithmetic. Needs more than degree+1 distinct x values to be
/// informative; fewer points always fit.
bool exact_polynomial_fit(const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& y, std::size_t degree);

struct SweepResult {
  std::vector<CostReport> rows;  ///< for each m: vpt-deep row then cvpt row
  PolyFit vpt_score_fit;         ///< degree 2 in m
  PolyFit cvpt_block_fit;        ///< degree 1 in m
  bool vpt_score_exact = false;
  bool cvpt_block_exact = false;
  bool gap_widens = false;       ///< VPT - CVPT total FLOPs strictly increasing in m
  std::string csv() const;
};

/// Cost rows for VPT-deep and CVPT at every prompt count (sorted ascending).
SweepResult sweep(const CostShape& base, std::vector<std::size_t> prompt_counts);

}  // namespace cvpt
