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

#include "cvpt/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

std::uint64_t flops_vpt_scores(std::uint64_t n, std::uint64_t m, std::uint64_t d) {
  const std::uint64_t t = n + m;
  return 4 * t * t * d;
}

std::uint64_t flops_vpt_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads) {
  if (n == 0) throw ConfigError("flops_vpt_attention: n must be >= 1");
  if (heads == 0 || d % heads != 0) throw ConfigError("flops_vpt_attention: heads must divide d");
  return 8 * (n + m) * d * d + flops_vpt_scores(n, m, d);
}

std::uint64_t flops_cross_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads,
                                    CaMode mode) {
  if (n == 0 || m == 0) throw ConfigError("flops_cross_attention: n and m must be >= 1");
  if (heads == 0 || d % heads != 0) throw ConfigError("flops_cross_attention: heads must divide d");
  std::uint64_t f = 2 * n * d * d + 2 * m * d * d + 4 * n * m * d;
  if (mode == CaMode::kFull) f += 2 * m * d * d + 2 * n * d * d;
  return f;
}

std::uint64_t flops_cvpt_block(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads, CaMode mode) {
  return flops_vpt_attention(n, 0, d, heads) + flops_cross_attention(n, m, d, 1, mode);
}

std::uint64_t flops_mlp(std::uint64_t t, std::uint64_t d) { return 16 * t * d * d; }

std::uint64_t flops_patch_embed(std::uint64_t patches, std::uint64_t patch_dim, std::uint64_t d) {
  return 2 * patches * patch_dim * d;
}

std::uint64_t flops_head(std::uint64_t d, std::uint64_t classes) { return 2 * d * classes; }

CostShape CostShape::from_config(const ViTConfig& c) {
  CostShape s;
  s.variant = c.variant_label();
  s.n = c.tokens();
  s.m = c.prompts;
  s.d = c.d;
  s.depth = c.depth;
  s.heads = c.heads;
  s.ca_heads = c.ca_heads;
  s.ca_mode = c.ca_mode;
  s.patch_dim = c.patch_dim();
  s.num_classes = c.num_classes;
  return s;
}

namespace {

void check_shape(const CostShape& s) {
  if (s.variant != "plain" && s.variant != "vpt-shallow" && s.variant != "vpt-deep" && s.variant != "cvpt") {
    throw ConfigError("unknown variant '" + s.variant + "'");
  }
  if (s.n == 0 || s.d == 0 || s.depth == 0) throw ConfigError("cost shape needs n, d, depth >= 1");
  if (s.variant == "plain" && s.m != 0) throw ConfigError("plain variant takes no prompts");
  if (s.variant != "plain" && s.m == 0) throw ConfigError(s.variant + " needs at least one prompt");
}

bool is_vpt(const CostShape& s) { return s.variant == "vpt-deep" || s.variant == "vpt-shallow"; }

std::uint64_t splice_elements(std::uint64_t t, std::uint64_t m, std::uint64_t d) {
  return t == 1 ? (1 + m) * d : (2 * t + m) * d;
}

std::uint64_t strip_elements(std::uint64_t t, std::uint64_t d) { return t == 1 ? d : 2 * t * d; }

}  // namespace

std::uint64_t activation_elements_self_attention(std::uint64_t t, std::uint64_t d, std::uint64_t heads) {
  std::uint64_t e = 5 * t * d + 3 * heads * t * t;
  if (heads > 1) e += 4 * t * d;
  return e;
}

std::uint64_t activation_elements_cross_attention(std::uint64_t n, std::uint64_t m, std::uint64_t d,
                                                  std::uint64_t heads, CaMode mode) {
  std::uint64_t e = n * d + m * d + 3 * heads * n * m + n * d;
  if (heads > 1) e += (n + 2 * m) * d + n * d;
  if (mode == CaMode::kFull) e += m * d + n * d;
  return e;
}

std::uint64_t activation_elements_block(const CostShape& s, std::size_t) {
  check_shape(s);
  const std::uint64_t n = s.n, m = s.m, d = s.d;
  if (s.variant == "plain") return 18 * n * d + activation_elements_self_attention(n, d, s.heads);
  if (s.variant == "cvpt") {
    return 19 * n * d + activation_elements_self_attention(n, d, s.heads) +
           activation_elements_cross_attention(n, m, d, s.ca_heads, s.ca_mode);
  }
  std::uint64_t e = splice_elements(n, m, d) + 18 * (n + m) * d +
                    activation_elements_self_attention(n + m, d, s.heads) + strip_elements(n, d);
  if (s.variant == "vpt-shallow") e += m * d;
  return e;
}

std::uint64_t activation_bytes_forward(const CostShape& s) {
  check_shape(s);
  const std::uint64_t n = s.n, d = s.d;
  std::uint64_t e = (2 * (n - 1) + 2 * n) * d;
  for (std::size_t b = 0; b < s.depth; ++b) e += activation_elements_block(s, b);
  e += 2 * d + 2 * s.num_classes;
  return e * sizeof(float);
}

CostReport cost_report(const CostShape& s) {
  check_shape(s);
  CostReport r;
  r.shape = s;
  const std::uint64_t n = s.n, m = s.m, d = s.d;
  const std::uint64_t tokens = is_vpt(s) ? n + m : n;
  if (s.variant == "cvpt") {
    r.attn_flops = flops_cvpt_block(n, m, d, s.heads, s.ca_mode);
  } else {
    r.attn_flops = flops_vpt_attention(n, is_vpt(s) ? m : 0, d, s.heads);
  }
  r.block_flops = r.attn_flops + flops_mlp(tokens, d);
  r.total_flops = flops_patch_embed(n - 1, s.patch_dim, d) + s.depth * r.block_flops + flops_head(d, s.num_classes);
  const std::uint64_t head = d * s.num_classes + s.num_classes;
  if (s.variant == "vpt-shallow") {
    r.trainable_params = m * d + head;
  } else if (s.variant == "plain") {
    r.trainable_params = head;
  } else {
    r.trainable_params = m * d * s.depth + head;
  }
  r.act_mem_bytes = activation_bytes_forward(s);
  return r;
}

MeasuredBlock measure_block(const CostShape& s, std::uint64_t seed) {
  check_shape(s);
  const std::size_t d = s.d;
  Rng rng(seed);
  auto w = [&](std::size_t rows, std::size_t cols) { return uniform_tensor<float>({rows, cols}, -0.2, 0.2, rng); };

  std::vector<Tensor> store;
  store.reserve(32);
  auto keep = [&](Tensor t) -> const Tensor& {
    store.push_back(std::move(t));
    return store.back();
  };

  Graph<float> g;
  auto param = [&](Tensor t) { return g.parameter(keep(std::move(t)), false); };
  EncoderBlockParams<float> p;
  p.ln1 = {param(Tensor::full({d}, 1.0f)), param(Tensor({d}))};
  p.ln2 = {param(Tensor::full({d}, 1.0f)), param(Tensor({d}))};
  p.sa = {param(w(d, d)), param(w(d, d)), param(w(d, d)), param(w(d, d)), s.heads};
  p.mlp = {param(w(d, 4 * d)), param(Tensor({4 * d})), param(w(4 * d, d)), param(Tensor({d}))};
  if (s.m > 0) p.prompts = param(w(s.m, d));
  if (s.variant == "cvpt") {
    CrossAttentionParams<float> ca;
    ca.w_q = param(w(d, d));
    ca.w_k = param(w(d, d));
    if (s.ca_mode == CaMode::kFull) {
      ca.w_v = param(w(d, d));
      ca.w_o = param(w(d, d));
    }
    ca.heads = s.ca_heads;
    ca.mode = s.ca_mode;
    p.ca = ca;
  }
  Var<float> x = g.constant(w(s.n, d));
  const BlockContext<float> ctx{nullptr, 0};
  if (s.variant == "plain") {
    p.variant = BlockVariant::kPlain;
    plain_block(x, p, ctx);
  } else if (s.variant == "cvpt") {
    p.variant = BlockVariant::kCvpt;
    cvpt_block(x, p, ctx);
  } else {
    p.variant = BlockVariant::kVpt;
    const VptMode mode = s.variant == "vpt-deep" ? VptMode::kDeep : VptMode::kShallow;
    vpt_block<float>({x, std::nullopt}, p, mode, true, ctx, PromptDrop::kAfterBlock);
  }
  return {g.flops(), g.activation_bytes()};
}

PolyFit poly_fit(const std::vector<double>& x, const std::vector<double>& y, std::size_t degree) {
  if (x.size() != y.size() || x.size() < degree + 1) throw InputError("poly_fit: need at least degree+1 points");
  const std::size_t k = degree + 1;
  // Normal equations solved by Gaussian elimination with partial pivoting; x
  // is centered and scaled first for conditioning.
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double spread = 0.0;
  for (double v : x) spread = std::max(spread, std::abs(v - mean));
  if (spread == 0.0) spread = 1.0;
  std::vector<std::vector<long double>> a(k, std::vector<long double>(k + 1, 0.0L));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double u = (x[i] - mean) / spread;
    std::vector<long double> pw(2 * k, 1.0L);
    for (std::size_t e = 1; e < 2 * k; ++e) pw[e] = pw[e - 1] * u;
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r][c] += pw[r + c];
      a[r][k] += pw[r] * y[i];
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < k; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    if (a[c][c] == 0.0L) throw InputError("poly_fit: singular system (too few distinct x values)");
    for (std::size_t r = 0; r < k; ++r) {
      if (r == c) continue;
      const long double f = a[r][c] / a[c][c];
      for (std::size_t q = c; q <= k; ++q) a[r][q] -= f * a[c][q];
    }
  }
  std::vector<long double> cu(k);
  for (std::size_t c = 0; c < k; ++c) cu[c] = a[c][k] / a[c][c];

  // Back to powers of x: sum_j cu_j ((x - mean)/spread)^j.
  PolyFit fit;
  fit.coeffs.assign(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    long double binom = 1.0L;
    for (std::size_t i = 0; i <= j; ++i) {
      // term: C(j,i) x^i (-mean)^(j-i) / spread^j
      const long double term =
          cu[j] * binom * std::pow(-static_cast<long double>(mean), static_cast<long double>(j - i)) /
          std::pow(static_cast<long double>(spread), static_cast<long double>(j));
      fit.coeffs[i] += static_cast<double>(term);
      binom = binom * static_cast<long double>(j - i) / static_cast<long double>(i + 1);
    }
  }

  const long double ybar = std::accumulate(y.begin(), y.end(), 0.0L) / static_cast<long double>(y.size());
  long double ss_res = 0.0L, ss_tot = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double u = (x[i] - mean) / spread;
    long double pred = 0.0L, pw = 1.0L;
    for (std::size_t j = 0; j < k; ++j) {
      pred += cu[j] * pw;
      pw *= u;
    }
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r2 = ss_tot == 0.0L ? 1.0 : static_cast<double>(1.0L - ss_res / ss_tot);
  return fit;
}

namespace {

using i128 = __int128;

i128 abs128(i128 v) { return v < 0 ? -v : v; }

i128 gcd128(i128 a, i128 b) {
  a = abs128(a);
  b = abs128(b);
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

struct Rational {
  i128 num = 0;
  i128 den = 1;

  static Rational make(i128 n, i128 d) {
    if (d == 0) throw InputError("exact_polynomial_fit: repeated x value");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    const i128 g = gcd128(n, d);
    if (g > 1) {
      n /= g;
      d /= g;
    }
    return {n, d};
  }
};

Rational divided(const Rational& hi, const Rational& lo, i128 dx) {
  // (hi - lo) / dx
  const i128 g = gcd128(hi.den, lo.den);
  const i128 l = hi.den / g * lo.den;
  const i128 n = hi.num * (l / hi.den) - lo.num * (l / lo.den);
  return Rational::make(n, l * dx);
}

}  // namespace

bool exact_polynomial_fit(const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& y, std::size_t degree) {
  if (x.size() != y.size()) throw InputError("exact_polynomial_fit: x and y lengths differ");
  std::vector<Rational> table;
  for (auto v : y) table.push_back({v, 1});
  for (std::size_t order = 1; order <= degree + 1 && table.size() > 1; ++order) {
    std::vector<Rational> next;
    for (std::size_t i = 0; i + 1 < table.size(); ++i) {
      next.push_back(divided(table[i + 1], table[i], static_cast<i128>(x[i + order]) - x[i]));
    }
    table = std::move(next);
  }
  if (x.size() <= degree + 1) return true;
  return std::all_of(table.begin(), table.end(), [](const Rational& r) { return r.num == 0; });
}

std::string SweepResult::csv() const {
  std::ostringstream os;
  os << "variant,n,m,d,depth,attn_flops,block_flops,total_flops,trainable_params,act_mem_bytes\n";
  for (const auto& r : rows) {
    os << r.shape.variant << ',' << r.shape.n << ',' << r.shape.m << ',' << r.shape.d << ',' << r.shape.depth << ','
       << r.attn_flops << ',' << r.block_flops << ',' << r.total_flops << ',' << r.trainable_params << ','
       << r.act_mem_bytes << '\n';
  }
  return os.str();
}

SweepResult sweep(const CostShape& base, std::vector<std::size_t> prompt_counts) {
  if (prompt_counts.empty()) throw InputError("sweep: empty prompt-count list");
  std::sort(prompt_counts.begin(), prompt_counts.end());
  if (std::adjacent_find(prompt_counts.begin(), prompt_counts.end()) != prompt_counts.end()) {
    throw InputError("sweep: repeated prompt count");
  }
  if (prompt_counts.front() == 0) throw InputError("sweep: prompt counts must be >= 1");
  SweepResult res;
  std::vector<double> xm, score, cvpt_block;
  std::vector<std::int64_t> xi, score_i, cvpt_i;
  std::vector<std::int64_t> gaps;
  for (std::size_t m : prompt_counts) {
    CostShape v = base;
    v.variant = "vpt-deep";
    v.m = m;
    CostShape c = base;
    c.variant = "cvpt";
    c.m = m;
    const CostReport rv = cost_report(v);
    const CostReport rc = cost_report(c);
    res.rows.push_back(rv);
    res.rows.push_back(rc);
    const std::uint64_t s = flops_vpt_scores(base.n, m, base.d);
    xm.push_back(static_cast<double>(m));
    score.push_back(static_cast<double>(s));
    cvpt_block.push_back(static_cast<double>(rc.block_flops));
    xi.push_back(static_cast<std::int64_t>(m));
    score_i.push_back(static_cast<std::int64_t>(s));
    cvpt_i.push_back(static_cast<std::int64_t>(rc.block_flops));
    gaps.push_back(static_cast<std::int64_t>(rv.total_flops) - static_cast<std::int64_t>(rc.total_flops));
  }
  if (prompt_counts.size() >= 3) res.vpt_score_fit = poly_fit(xm, score, 2);
  if (prompt_counts.size() >= 2) res.cvpt_block_fit = poly_fit(xm, cvpt_block, 1);
  res.vpt_score_exact = exact_polynomial_fit(xi, score_i, 2);
  res.cvpt_block_exact = exact_polynomial_fit(xi, cvpt_i, 1);
  res.gap_widens = true;
  for (std::size_t i = 1; i < gaps.size(); ++i) {
    if (gaps[i] <= gaps[i - 1]) res.gap_widens = false;
  }
  return res;
}

}  // namespace cvpt
