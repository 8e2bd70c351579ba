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

#include "cvpt/blocks.hpp"

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"

namespace cvpt {

std::string to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::kPlain:
      return "plain";
    case BlockVariant::kVpt:
      return "vpt";
    case BlockVariant::kCvpt:
      return "cvpt";
  }
  return "?";
}

std::string to_string(VptMode m) { return m == VptMode::kShallow ? "shallow" : "deep"; }

namespace {

template <typename T>
void require_variant(const EncoderBlockParams<T>& p, BlockVariant want, const char* op) {
  if (p.variant != want) {
    throw ConfigError(std::string(op) + ": block variant is " + to_string(p.variant) + ", expected " +
                      to_string(want));
  }
}

template <typename T>
Var<T> attention_residual(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx) {
  if (ctx.probe) ctx.probe->layer = ctx.layer;
  Var<T> h = layer_norm(x, p.ln1.gamma, p.ln1.beta);
  return add(x, self_attention(h, p.sa, ctx.probe));
}

template <typename T>
Var<T> mlp_residual(const Var<T>& x, const EncoderBlockParams<T>& p) {
  return add(x, mlp(layer_norm(x, p.ln2.gamma, p.ln2.beta), p.mlp));
}

template <typename T>
Var<T> run_standard(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx) {
  return mlp_residual(attention_residual(x, p, ctx), p);
}

// [cls, P, patches]
template <typename T>
Var<T> splice_prompts(const Var<T>& x, const Var<T>& prompts) {
  const std::size_t t = x.shape()[0];
  if (t == 1) return concat_rows<T>({x, prompts});
  return concat_rows<T>({slice_rows(x, 0, 1), prompts, slice_rows(x, 1, t - 1)});
}

template <typename T>
Var<T> strip_prompts(const Var<T>& y, std::size_t m) {
  const std::size_t total = y.shape()[0];
  const std::size_t t = total - m;
  if (t == 1) return slice_rows(y, 0, 1);
  return concat_rows<T>({slice_rows(y, 0, 1), slice_rows(y, 1 + m, t - 1)});
}

template <typename T>
std::size_t prompt_rows(const Var<T>& prompts, std::size_t d, const char* op) {
  const auto& s = prompts.shape();
  if (s.size() != 2 || s[1] != d) {
    throw DimensionError(std::string(op) + ": prompts must be m x " + std::to_string(d) + ", got " +
                         shape_string(s));
  }
  return s[0];
}

}  // namespace

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& p) {
  RegionScope<T> region(x.graph(), Region::kMlp);
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Var<T> plain_block(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx) {
  require_variant(p, BlockVariant::kPlain, "plain_block");
  return run_standard(x, p, ctx);
}

template <typename T>
VptState<T> vpt_block(const VptState<T>& in, const EncoderBlockParams<T>& p, VptMode mode, bool first_block,
                      const BlockContext<T>& ctx, PromptDrop drop) {
  require_variant(p, BlockVariant::kVpt, "vpt_block");
  const Var<T>& x = in.tokens;
  const std::size_t d = x.shape()[1];

  Var<T> prompts;
  if (mode == VptMode::kDeep || first_block) {
    if (!p.prompts) throw ConfigError("vpt_block: block has no prompts");
    prompts = *p.prompts;
  } else {
    if (!in.carried) {
      throw ConfigError("vpt_block: shallow block beyond the first needs carried prompt state");
    }
    prompts = *in.carried;
  }
  const std::size_t m = prompt_rows(prompts, d, "vpt_block");
  if (m == 0) throw ConfigError("vpt_block: prompt count must be positive");

  if (mode == VptMode::kShallow) {
    if (drop != PromptDrop::kAfterBlock) throw ConfigError("vpt_block: drop points apply to deep mode only");
    Var<T> y = run_standard(splice_prompts(x, prompts), p, ctx);
    return {strip_prompts(y, m), slice_rows(y, 1, m)};
  }

  switch (drop) {
    case PromptDrop::kAfterBlock:
      return {strip_prompts(run_standard(splice_prompts(x, prompts), p, ctx), m), std::nullopt};
    case PromptDrop::kAfterAttention: {
      Var<T> h = attention_residual(splice_prompts(x, prompts), p, ctx);
      return {mlp_residual(strip_prompts(h, m), p), std::nullopt};
    }
    case PromptDrop::kBeforeAttention:
      return {run_standard(x, p, ctx), std::nullopt};
  }
  throw ConfigError("vpt_block: unknown drop point");
}

template <typename T>
Var<T> cvpt_block(const Var<T>& x, const EncoderBlockParams<T>& p, const BlockContext<T>& ctx) {
  require_variant(p, BlockVariant::kCvpt, "cvpt_block");
  if (!p.ca || !p.prompts) throw ConfigError("cvpt_block: block needs cross-attention and prompts");
  const std::size_t m = prompt_rows(*p.prompts, x.shape()[1], "cvpt_block");
  if (m == 0) throw ConfigError("cvpt_block: prompt count must be positive");
  const Var<T>& prompts = *p.prompts;
  const auto& ca = *p.ca;
  if (ctx.probe) ctx.probe->layer = ctx.layer;

  switch (p.ca_position) {
    case 1: {
      Var<T> x0 = add(x, cross_attention(x, prompts, ca, ctx.probe));
      return run_standard(x0, p, ctx);
    }
    case 2: {
      Var<T> h = layer_norm(x, p.ln1.gamma, p.ln1.beta);
      Var<T> sa = self_attention(h, p.sa, ctx.probe);
      Var<T> x1 = add(add(x, sa), cross_attention(h, prompts, ca, ctx.probe));
      return mlp_residual(x1, p);
    }
    case 3: {
      Var<T> x1 = attention_residual(x, p, ctx);
      Var<T> x2 = add(x1, cross_attention(x1, prompts, ca, ctx.probe));
      return mlp_residual(x2, p);
    }
    case 4: {
      Var<T> x1 = attention_residual(x, p, ctx);
      Var<T> h = layer_norm(x1, p.ln2.gamma, p.ln2.beta);
      return add(add(x1, mlp(h, p.mlp)), cross_attention(h, prompts, ca, ctx.probe));
    }
    case 5: {
      Var<T> x2 = run_standard(x, p, ctx);
      return add(x2, cross_attention(x2, prompts, ca, ctx.probe));
    }
    default:
      throw ConfigError("cvpt_block: ca_position must be in 1..5, got " + std::to_string(p.ca_position));
  }
}

template Var<float> mlp(const Var<float>&, const MlpParams<float>&);
template Var<double> mlp(const Var<double>&, const MlpParams<double>&);
template Var<float> plain_block(const Var<float>&, const EncoderBlockParams<float>&, const BlockContext<float>&);
template Var<double> plain_block(const Var<double>&, const EncoderBlockParams<double>&,
                                 const BlockContext<double>&);
template VptState<float> vpt_block(const VptState<float>&, const EncoderBlockParams<float>&, VptMode, bool,
                                   const BlockContext<float>&, PromptDrop);
template VptState<double> vpt_block(const VptState<double>&, const EncoderBlockParams<double>&, VptMode, bool,
                                    const BlockContext<double>&, PromptDrop);
template Var<float> cvpt_block(const Var<float>&, const EncoderBlockParams<float>&, const BlockContext<float>&);
template Var<double> cvpt_block(const Var<double>&, const EncoderBlockParams<double>&, const BlockContext<double>&);

}  // namespace cvpt
