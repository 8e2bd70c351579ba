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

#include "cvpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cvpt/error.hpp"

namespace cvpt {

namespace {

template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
void count_other(Graph<T>& g, std::size_t elements) {
  g.flops().other += elements;
}

template <typename T>
void count_matmul(Graph<T>& g, std::size_t p, std::size_t q, std::size_t r) {
  g.flops().matmul[static_cast<std::size_t>(g.region())] += 2ULL * p * q * r;
}

template <typename T>
Graph<T>& same_graph(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands live on different graphs");
  return a.graph();
}

}  // namespace

namespace kernels {

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  BasicTensor<T> c({p, r});
  const T* __restrict ap = a.data().data();
  const T* __restrict bp = b.data().data();
  T* __restrict cp = c.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    T* __restrict crow = cp + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = ap[i * q + k];
      const T* __restrict brow = bp + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  const std::size_t p = a.rows(), q = a.cols();
  BasicTensor<T> t({q, p});
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) t(j, i) = a(i, j);
  }
  return t;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return matmul(a, transpose(b));
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  BasicTensor<T> c({q, r});
  const T* __restrict ap = a.data().data();
  const T* __restrict bp = b.data().data();
  T* __restrict cp = c.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    const T* __restrict brow = bp + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = ap[i * q + k];
      T* __restrict crow = cp + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  const std::size_t n = x.rows(), k = x.cols();
  BasicTensor<T> y({n, k});
  std::vector<double> e(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto in = x.row(i);
    auto out = y.row(i);
    double mx = in[0];
    for (auto v : in) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(in[j]) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<T>(e[j] / sum);
  }
  return y;
}

template <typename T>
T gelu(T x) {
  const double v = x;
  const double u = kGeluSqrt2OverPi * (v + kGeluCubic * v * v * v);
  return static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
}

}  // namespace kernels

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& g = same_graph(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: shapes " + shape_string(A.shape()) + " and " + shape_string(B.shape()) +
                         " are incompatible");
  }
  count_matmul(g, A.rows(), A.cols(), B.cols());
  return g.record("matmul", kernels::matmul(A, B), {a, b}, [a, b](Graph<T>& gr, const BasicTensor<T>& dc) {
    const auto& A = a.value();
    const auto& B = b.value();
    if (a.requires_grad()) {
      add_into(gr.grad_buffer(a), kernels::matmul_nt(dc, B));
      gr.flops().backward_matmul += 2ULL * A.rows() * A.cols() * B.cols();
    }
    if (b.requires_grad()) {
      add_into(gr.grad_buffer(b), kernels::matmul_tn(A, dc));
      gr.flops().backward_matmul += 2ULL * A.rows() * A.cols() * B.cols();
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  auto& g = same_graph(a, b, "matmul_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt: shapes " + shape_string(A.shape()) + " and " + shape_string(B.shape()) +
                         "^T are incompatible");
  }
  count_matmul(g, A.rows(), A.cols(), B.rows());
  return g.record("matmul_nt", kernels::matmul_nt(A, B), {a, b}, [a, b](Graph<T>& gr, const BasicTensor<T>& dc) {
    const auto& A = a.value();
    const auto& B = b.value();
    // C = A B^T:  dA = dC B,  dB = dC^T A
    if (a.requires_grad()) {
      add_into(gr.grad_buffer(a), kernels::matmul(dc, B));
      gr.flops().backward_matmul += 2ULL * A.rows() * A.cols() * B.rows();
    }
    if (b.requires_grad()) {
      add_into(gr.grad_buffer(b), kernels::matmul_tn(dc, A));
      gr.flops().backward_matmul += 2ULL * A.rows() * A.cols() * B.rows();
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& g = same_graph(a, b, "add");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("add: shapes " + shape_string(A.shape()) + " and " + shape_string(B.shape()) + " differ");
  }
  BasicTensor<T> out = A;
  add_into(out, B);
  count_other(g, out.size());
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& gr, const BasicTensor<T>& dy) {
    if (a.requires_grad()) add_into(gr.grad_buffer(a), dy);
    if (b.requires_grad()) add_into(gr.grad_buffer(b), dy);
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  auto& g = same_graph(x, bias, "add_bias");
  const auto& X = x.value();
  const auto& B = bias.value();
  require_matrix(X, "add_bias");
  const std::size_t n = X.rows(), d = X.cols();
  if (B.size() != d) {
    throw DimensionError("add_bias: bias shape " + shape_string(B.shape()) + " does not match " +
                         shape_string(X.shape()));
  }
  BasicTensor<T> out = X;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] += B[j];
  }
  count_other(g, out.size());
  return g.record("add_bias", std::move(out), {x, bias}, [x, bias](Graph<T>& gr, const BasicTensor<T>& dy) {
    if (x.requires_grad()) add_into(gr.grad_buffer(x), dy);
    if (bias.requires_grad()) {
      auto& db = gr.grad_buffer(bias);
      const std::size_t n = dy.rows(), d = dy.cols();
      for (std::size_t i = 0; i < n; ++i) {
        auto row = dy.row(i);
        for (std::size_t j = 0; j < d; ++j) db[j] += row[j];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  auto& g = x.graph();
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = static_cast<T>(v * s);
  count_other(g, out.size());
  return g.record("scale", std::move(out), {x}, [x, s](Graph<T>& gr, const BasicTensor<T>& dy) {
    auto& dx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(dy[i] * s);
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  auto& g = x.graph();
  require_matrix(x.value(), "softmax_rows");
  auto y = kernels::softmax_rows(x.value());
  count_other(g, y.size());
  // The output id is the next node; the closure reads y back from the tape.
  const std::size_t out_id = g.size();
  return g.record("softmax_rows", std::move(y), {x}, [x, out_id](Graph<T>& gr, const BasicTensor<T>& dy) {
    const auto& Y = gr.value(out_id);
    auto& dx = gr.grad_buffer(x);
    const std::size_t n = Y.rows(), k = Y.cols();
    for (std::size_t i = 0; i < n; ++i) {
      auto yr = Y.row(i);
      auto dyr = dy.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dyr[j]) * yr[j];
      auto dxr = dx.row(i);
      for (std::size_t j = 0; j < k; ++j) dxr[j] += static_cast<T>(yr[j] * (dyr[j] - dot));
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  auto& g = x.graph();
  const auto& X = x.value();
  require_matrix(X, "layer_norm");
  const std::size_t n = X.rows(), d = X.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: parameters " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
                         " do not match rows of " + shape_string(X.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const auto& G = gamma.value();
  const auto& Bt = beta.value();
  BasicTensor<T> xhat({n, d});
  BasicTensor<T> y({n, d});
  std::vector<double> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto in = X.row(i);
    double mean = 0.0;
    for (auto v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    auto xh = xhat.row(i);
    auto out = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mean) * rstd[i];
      xh[j] = static_cast<T>(h);
      out[j] = static_cast<T>(G[j] * h + Bt[j]);
    }
  }
  count_other(g, y.size());
  return g.record("layer_norm", std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& gr,
                                                                                  const BasicTensor<T>& dy) {
                    const std::size_t n = dy.rows(), d = dy.cols();
                    const auto& G = gamma.value();
                    if (gamma.requires_grad() || beta.requires_grad()) {
                      for (std::size_t i = 0; i < n; ++i) {
                        auto dyr = dy.row(i);
                        auto xh = xhat.row(i);
                        if (gamma.requires_grad()) {
                          auto& dg = gr.grad_buffer(gamma);
                          for (std::size_t j = 0; j < d; ++j) dg[j] += dyr[j] * xh[j];
                        }
                        if (beta.requires_grad()) {
                          auto& db = gr.grad_buffer(beta);
                          for (std::size_t j = 0; j < d; ++j) db[j] += dyr[j];
                        }
                      }
                    }
                    if (!x.requires_grad()) return;
                    auto& dx = gr.grad_buffer(x);
                    std::vector<double> dxh(d);
                    for (std::size_t i = 0; i < n; ++i) {
                      auto dyr = dy.row(i);
                      auto xh = xhat.row(i);
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxh[j] = static_cast<double>(dyr[j]) * G[j];
                        mean_dxh += dxh[j];
                        mean_dxh_xh += dxh[j] * xh[j];
                      }
                      mean_dxh /= static_cast<double>(d);
                      mean_dxh_xh /= static_cast<double>(d);
                      auto dxr = dx.row(i);
                      for (std::size_t j = 0; j < d; ++j) {
                        dxr[j] += static_cast<T>(rstd[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh));
                      }
                    }
                  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  auto& g = x.graph();
  BasicTensor<T> y = x.value();
  for (auto& v : y.data()) v = kernels::gelu(v);
  count_other(g, y.size());
  return g.record("gelu", std::move(y), {x}, [x](Graph<T>& gr, const BasicTensor<T>& dy) {
    const auto& X = x.value();
    auto& dx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double u = kGeluSqrt2OverPi * (v + kGeluCubic * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
      const double deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      dx[i] += static_cast<T>(dy[i] * deriv);
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  auto& g = x.graph();
  const auto& X = x.value();
  require_matrix(X, "slice_rows");
  if (count == 0 || begin + count > X.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(X.shape()));
  }
  const std::size_t d = X.cols();
  std::vector<T> data(X.data().begin() + begin * d, X.data().begin() + (begin + count) * d);
  return g.record("slice_rows", BasicTensor<T>({count, d}, std::move(data)), {x},
                  [x, begin](Graph<T>& gr, const BasicTensor<T>& dy) {
                    auto& dx = gr.grad_buffer(x);
                    const std::size_t off = begin * dy.cols();
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
                  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  auto& g = parts.front().graph();
  const std::size_t d = parts.front().value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    rows += p.value().rows();
  }
  std::vector<T> data;
  data.reserve(rows * d);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return g.record("concat_rows", BasicTensor<T>({rows, d}, std::move(data)), parts,
                  [parts](Graph<T>& gr, const BasicTensor<T>& dy) {
                    std::size_t off = 0;
                    for (const auto& p : parts) {
                      const std::size_t len = p.value().size();
                      if (p.requires_grad()) {
                        auto& dp = gr.grad_buffer(p);
                        for (std::size_t i = 0; i < len; ++i) dp[i] += dy[off + i];
                      }
                      off += len;
                    }
                  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count) {
  auto& g = x.graph();
  const auto& X = x.value();
  require_matrix(X, "slice_cols");
  if (count == 0 || begin + count > X.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(X.shape()));
  }
  const std::size_t n = X.rows();
  BasicTensor<T> out({n, count});
  for (std::size_t i = 0; i < n; ++i) {
    auto src = X.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return g.record("slice_cols", std::move(out), {x}, [x, begin](Graph<T>& gr, const BasicTensor<T>& dy) {
    auto& dx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
      auto src = dy.row(i);
      auto dst = dx.row(i).subspan(begin, dy.cols());
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  auto& g = parts.front().graph();
  const std::size_t n = parts.front().value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    cols += p.value().cols();
  }
  BasicTensor<T> out({n, cols});
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = out.row(i).begin();
    for (const auto& p : parts) {
      auto src = p.value().row(i);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return g.record("concat_cols", std::move(out), parts, [parts](Graph<T>& gr, const BasicTensor<T>& dy) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.value().cols();
      if (p.requires_grad()) {
        auto& dp = gr.grad_buffer(p);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
          auto src = dy.row(i).subspan(off, c);
          auto dst = dp.row(i);
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
      off += c;
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label) {
  auto& g = logits.graph();
  const auto& L = logits.value();
  const std::size_t k = L.size();
  if (label >= k) {
    throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                         " classes");
  }
  double mx = L[0];
  for (auto v : L.data()) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (auto v : L.data()) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  const double loss = lse - static_cast<double>(L[label]);
  count_other(g, k);
  return g.record("cross_entropy", BasicTensor<T>({1}, {static_cast<T>(loss)}), {logits},
                  [logits, label, lse](Graph<T>& gr, const BasicTensor<T>& dy) {
                    const auto& L = logits.value();
                    auto& dl = gr.grad_buffer(logits);
                    const double up = dy[0];
                    for (std::size_t j = 0; j < L.size(); ++j) {
                      const double p = std::exp(static_cast<double>(L[j]) - lse);
                      dl[j] += static_cast<T>(up * (p - (j == label ? 1.0 : 0.0)));
                    }
                  });
}

template <typename T>
Var<T> dot_constant(const Var<T>& x, const BasicTensor<T>& weights) {
  auto& g = x.graph();
  const auto& X = x.value();
  if (X.shape() != weights.shape()) {
    throw DimensionError("dot_constant: shapes " + shape_string(X.shape()) + " and " +
                         shape_string(weights.shape()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) s += static_cast<double>(X[i]) * weights[i];
  count_other(g, X.size());
  return g.record("dot_constant", BasicTensor<T>({1}, {static_cast<T>(s)}), {x},
                  [x, weights](Graph<T>& gr, const BasicTensor<T>& dy) {
                    auto& dx = gr.grad_buffer(x);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(dy[0] * weights[i]);
                  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& x) {
  auto& g = x.graph();
  double s = 0.0;
  for (auto v : x.value().data()) s += static_cast<double>(v) * v;
  count_other(g, x.value().size());
  return g.record("sum_squares", BasicTensor<T>({1}, {static_cast<T>(s)}), {x},
                  [x](Graph<T>& gr, const BasicTensor<T>& dy) {
                    const auto& X = x.value();
                    auto& dx = gr.grad_buffer(x);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(2.0 * dy[0] * X[i]);
                  });
}

#define CVPT_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> kernels::matmul(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> kernels::matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> kernels::matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> kernels::transpose(const BasicTensor<T>&);                        \
  template BasicTensor<T> kernels::softmax_rows(const BasicTensor<T>&);                     \
  template T kernels::gelu(T);                                                              \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                     \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                   \
  template Var<T> scale(const Var<T>&, double);                                             \
  template Var<T> softmax_rows(const Var<T>&);                                              \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);          \
  template Var<T> gelu(const Var<T>&);                                                      \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                  \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                  \
  template Var<T> cross_entropy(const Var<T>&, std::size_t);                                \
  template Var<T> dot_constant(const Var<T>&, const BasicTensor<T>&);                       \
  template Var<T> sum_squares(const Var<T>&);

CVPT_INSTANTIATE_OPS(float)
CVPT_INSTANTIATE_OPS(double)

}  // namespace cvpt
