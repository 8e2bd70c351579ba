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
#include <vector>

#include "cvpt/graph.hpp"
#include "cvpt/tensor.hpp"

namespace cvpt {

/// tanh-approximation GELU constants (10 significant digits).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kLayerNormEps = 1e-6;

namespace kernels {

// Plain (untaped) kernels. C is overwritten. Loop order is fixed so results
// are bit-reproducible and each output row depends only on its input row.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a * b^T
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a^T * b
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);
template <typename T>
T gelu(T x);

}  // namespace kernels

// Differentiable ops. Each records its output on the inputs' graph and, when an
// input requires a gradient, a backward closure.

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a * b^T; charged as 2*p*q*r like matmul.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
/// x [n x d] + bias [d] broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
template <typename T>
Var<T> scale(const Var<T>& x, double s);
template <typename T>
Var<T> softmax_rows(const Var<T>& x);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = kLayerNormEps);
template <typename T>
Var<T> gelu(const Var<T>& x);

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);

/// x W + b for x [n x in], W [in x out], b [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_bias(matmul(x, w), b);
}

/// -log softmax(logits)[label] for logits [1 x k]; result shape [1].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label);
/// sum(x * weights) with a constant weight tensor of x's shape; result shape [1].
template <typename T>
Var<T> dot_constant(const Var<T>& x, const BasicTensor<T>& weights);
/// sum(x^2); result shape [1].
template <typename T>
Var<T> sum_squares(const Var<T>& x);

}  // namespace cvpt
