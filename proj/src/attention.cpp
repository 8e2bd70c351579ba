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

#include "cvpt/attention.hpp"

#include <cmath>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"

namespace cvpt {

std::string to_string(CaMode mode) { return mode == CaMode::kLiteral ? "literal" : "full"; }

CaMode parse_ca_mode(const std::string& text) {
  if (text == "literal") return CaMode::kLiteral;
  if (text == "full") return CaMode::kFull;
  throw ConfigError("unknown cross-attention mode '" + text + "' (expected literal or full)");
}

template <typename T>
BasicTensor<T> AttentionProbe<T>::mean_weights(std::size_t want_layer, AttentionKind kind) const {
  BasicTensor<T> sum;
  std::size_t count = 0;
  for (const auto& r : records) {
    if (r.layer != want_layer || r.kind != kind) continue;
    if (count == 0) {
      sum = r.weights;
    } else {
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += r.weights[i];
    }
    ++count;
  }
  if (count > 1) {
    for (auto& v : sum.data()) v = static_cast<T>(v / static_cast<T>(count));
  }
  return sum;
}

namespace {

template <typename T>
void check_square(const Var<T>& w, std::size_t d, const char* what) {
  const auto& s = w.shape();
  if (s.size() != 2 || s[0] != d || s[1] != d) {
    throw DimensionError(std::string(what) + " must be " + std::to_string(d) + "x" + std::to_string(d) + ", got " +
                         shape_string(s));
  }
}

void check_heads(std::size_t d, std::size_t heads, const char* what) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(std::string(what) + ": head count " + std::to_string(heads) + " does not divide d=" +
                      std::to_string(d));
  }
}

template <typename T>
Var<T> head_slice(const Var<T>& x, std::size_t heads, std::size_t h, std::size_t dh) {
  return heads == 1 ? x : slice_cols(x, h * dh, dh);
}

// softmax(q k^T * scale) v per head, heads concatenated along columns.
template <typename T>
Var<T> attend(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads, AttentionKind kind,
              AttentionProbe<T>* probe) {
  const std::size_t d = q.shape()[1];
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool uniform = probe && probe->force_uniform_self && kind == AttentionKind::kSelf;
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = head_slice(q, heads, h, dh);
    Var<T> kh = head_slice(k, heads, h, dh);
    Var<T> vh = head_slice(v, heads, h, dh);
    Var<T> logits = scale(matmul_nt(qh, kh), uniform ? 0.0 : inv_sqrt);
    Var<T> weights = softmax_rows(logits);
    if (probe && probe->record) {
      probe->records.push_back({probe->layer, kind, h, logits.value(), weights.value()});
    }
    outs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outs.front() : concat_cols(outs);
}

}  // namespace

template <typename T>
Var<T> self_attention(const Var<T>& x, const SelfAttentionParams<T>& p, AttentionProbe<T>* probe) {
  if (x.shape().size() != 2) throw DimensionError("self_attention: input must be a matrix");
  const std::size_t d = x.shape()[1];
  check_heads(d, p.heads, "self_attention");
  check_square(p.w_q, d, "self-attention W_Q");
  check_square(p.w_k, d, "self-attention W_K");
  check_square(p.w_v, d, "self-attention W_V");
  check_square(p.w_o, d, "self-attention W_O");
  RegionScope<T> region(x.graph(), Region::kSelfAttention);
  Var<T> q = matmul(x, p.w_q);
  Var<T> k = matmul(x, p.w_k);
  Var<T> v = matmul(x, p.w_v);
  return matmul(attend(q, k, v, p.heads, AttentionKind::kSelf, probe), p.w_o);
}

template <typename T>
Var<T> cross_attention(const Var<T>& x1, const Var<T>& x2, const CrossAttentionParams<T>& p,
                       AttentionProbe<T>* probe) {
  if (x1.shape().size() != 2 || x2.shape().size() != 2) {
    throw DimensionError("cross_attention: inputs must be matrices");
  }
  if (x2.shape()[0] == 0) throw InputError("cross_attention: key/value set is empty (m == 0)");
  const std::size_t d = x1.shape()[1];
  if (x2.shape()[1] != d) {
    throw DimensionError("cross_attention: query " + shape_string(x1.shape()) + " and key/value " +
                         shape_string(x2.shape()) + " widths differ");
  }
  check_heads(d, p.heads, "cross_attention");
  check_square(p.w_q, d, "cross-attention W_Q");
  check_square(p.w_k, d, "cross-attention W_K");
  const bool full = p.mode == CaMode::kFull;
  if (full != p.w_v.has_value() || full != p.w_o.has_value()) {
    throw ConfigError("cross_attention: " + to_string(p.mode) + " mode requires W_V/W_O to be " +
                      (full ? "present" : "absent"));
  }
  RegionScope<T> region(x1.graph(), Region::kCrossAttention);
  Var<T> q = matmul(x1, p.w_q);
  Var<T> k = matmul(x2, p.w_k);
  if (!full) return attend(q, k, k, p.heads, AttentionKind::kCross, probe);
  check_square(*p.w_v, d, "cross-attention W_V");
  check_square(*p.w_o, d, "cross-attention W_O");
  Var<T> v = matmul(x2, *p.w_v);
  return matmul(attend(q, k, v, p.heads, AttentionKind::kCross, probe), *p.w_o);
}

bool is_prompt_index(std::size_t index, std::size_t n, std::size_t m, PromptLayout layout) {
  switch (layout) {
    case PromptLayout::kPromptsFirst:
      return index < m;
    case PromptLayout::kPromptsLast:
      return index >= n;
    case PromptLayout::kAfterCls:
      return index >= 1 && index < 1 + m;
  }
  return false;
}

template <typename T>
AttentionMassReport attention_mass_partition(const BasicTensor<T>& weights, std::size_t n, std::size_t m,
                                             PromptLayout layout) {
  const std::size_t side = n + m;
  if (weights.rank() != 2 || weights.rows() != side || weights.cols() != side) {
    throw DimensionError("attention_mass_partition: expected a " + std::to_string(side) + "x" +
                         std::to_string(side) + " matrix, got " + shape_string(weights.shape()));
  }
  if (layout == PromptLayout::kAfterCls && n == 0 && m > 0) {
    throw InputError("attention_mass_partition: cls-relative layout needs at least one embedded token");
  }
  AttentionMassReport r;
  r.n_embedded = n;
  r.m_prompt = m;
  r.per_query_prompt_mass.resize(side);
  double ee = 0.0, ep = 0.0, pe = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < side; ++i) {
    auto row = weights.row(i);
    double to_prompt = 0.0, to_embedded = 0.0;
    for (std::size_t j = 0; j < side; ++j) {
      const double w = row[j];
      if (w < 0.0) throw InputError("attention_mass_partition: negative weight in row " + std::to_string(i));
      (is_prompt_index(j, n, m, layout) ? to_prompt : to_embedded) += w;
    }
    if (std::abs(to_prompt + to_embedded - 1.0) > 1e-4) {
      throw InputError("attention_mass_partition: row " + std::to_string(i) + " sums to " +
                       std::to_string(to_prompt + to_embedded) + ", not 1");
    }
    r.per_query_prompt_mass[i] = to_prompt;
    if (is_prompt_index(i, n, m, layout)) {
      pe += to_embedded;
      pp += to_prompt;
    } else {
      ee += to_embedded;
      ep += to_prompt;
    }
  }
  if (n > 0) {
    r.mass_ee = ee / static_cast<double>(n);
    r.mass_ep = ep / static_cast<double>(n);
  }
  if (m > 0) {
    r.mass_pe = pe / static_cast<double>(m);
    r.mass_pp = pp / static_cast<double>(m);
  }
  return r;
}

template struct AttentionProbe<float>;
template struct AttentionProbe<double>;
template Var<float> self_attention(const Var<float>&, const SelfAttentionParams<float>&, AttentionProbe<float>*);
template Var<double> self_attention(const Var<double>&, const SelfAttentionParams<double>&, AttentionProbe<double>*);
template Var<float> cross_attention(const Var<float>&, const Var<float>&, const CrossAttentionParams<float>&,
                                    AttentionProbe<float>*);
template Var<double> cross_attention(const Var<double>&, const Var<double>&, const CrossAttentionParams<double>&,
                                     AttentionProbe<double>*);
template AttentionMassReport attention_mass_partition(const BasicTensor<float>&, std::size_t, std::size_t,
                                                      PromptLayout);
template AttentionMassReport attention_mass_partition(const BasicTensor<double>&, std::size_t, std::size_t,
                                                      PromptLayout);

}  // namespace cvpt
