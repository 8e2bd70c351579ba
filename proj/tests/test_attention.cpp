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

#include <doctest.h>

#include <cmath>

#include "cvpt/attention.hpp"
#include "cvpt/error.hpp"
#include "cvpt/gradcheck.hpp"
#include "cvpt/ops.hpp"
#include "oracle_fixtures.hpp"
#include "test_util.hpp"

using namespace cvpt;
using testutil::fill;
using testutil::rand;

namespace {

struct SaWeights {
  Tensor64 q, k, v, o;
};

SaWeights oracle_weights() {
  return {fill(8, 8, 0.21, 0.17, 0.3, 0.5), fill(8, 8, 0.13, 0.29, 0.7, 0.5), fill(8, 8, 0.31, 0.07, 1.1, 0.5),
          fill(8, 8, 0.19, 0.23, 1.9, 0.5)};
}

}  // namespace

TEST_CASE("self-attention matches the reference implementation") {
  const SaWeights w = oracle_weights();
  Graph<double> g;
  SelfAttentionParams<double> p{g.constant(w.q), g.constant(w.k), g.constant(w.v), g.constant(w.o), 2};
  auto y = self_attention(g.constant(fill(5, 8, 0.37, 0.11, 0.05)), p).value();
  CHECK(testutil::max_diff(y, oracle::kSelfAttention) < 1e-12);
}

TEST_CASE("literal cross-attention matches the reference implementation") {
  const SaWeights w = oracle_weights();
  for (std::size_t heads : {1u, 2u}) {
    Graph<double> g;
    CrossAttentionParams<double> p;
    p.w_q = g.constant(w.q);
    p.w_k = g.constant(w.k);
    p.heads = heads;
    auto y = cross_attention(g.constant(fill(4, 8, 0.41, 0.09, 0.2)), g.constant(fill(3, 8, 0.27, 0.15, 0.9)), p)
                 .value();
    CHECK(testutil::max_diff(y, heads == 1 ? oracle::kCrossAttentionH1 : oracle::kCrossAttentionH2) < 1e-12);
  }
}

TEST_CASE("self-attention examples") {
  Graph<double> g;
  const std::size_t d = 16;
  SelfAttentionParams<double> p{g.constant(rand({d, d}, 1)), g.constant(rand({d, d}, 2)),
                                g.constant(rand({d, d}, 3)), g.constant(rand({d, d}, 4)), 4};
  // t = 1: the single key gets weight 1, so the output is x W_V W_O.
  auto x1 = g.constant(rand({1, d}, 5));
  auto y1 = self_attention(x1, p).value();
  auto ref = matmul(matmul(x1, p.w_v), p.w_o).value();
  CHECK(max_abs_diff(y1, ref) < 1e-12);

  // identical rows stay identical
  Tensor64 same({2, d});
  auto r = rand({1, d}, 6);
  for (std::size_t j = 0; j < d; ++j) same(0, j) = same(1, j) = r[j];
  auto y2 = self_attention(g.constant(same), p).value();
  for (std::size_t j = 0; j < d; ++j) CHECK(y2(0, j) == y2(1, j));

  // random t = 8, d = 16, 4 heads: each head's rows sum to 1
  AttentionProbe<double> probe;
  self_attention(g.constant(rand({8, d}, 7)), p, &probe);
  REQUIRE(probe.records.size() == 4);
  for (const auto& rec : probe.records) {
    CHECK(rec.kind == AttentionKind::kSelf);
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0.0;
      for (double v : rec.weights.row(i)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }

  SelfAttentionParams<double> bad = p;
  bad.heads = 3;
  CHECK_THROWS_AS(self_attention(g.constant(rand({2, d}, 8)), bad), ConfigError);
}

TEST_CASE("self-attention FLOPs are charged to the attention bucket") {
  Graph<float> g;
  const std::size_t t = 6, d = 8;
  SelfAttentionParams<float> p{g.constant(rand<float>({d, d}, 1)), g.constant(rand<float>({d, d}, 2)),
                               g.constant(rand<float>({d, d}, 3)), g.constant(rand<float>({d, d}, 4)), 2};
  self_attention(g.constant(rand<float>({t, d}, 5)), p);
  CHECK(g.flops().in(Region::kSelfAttention) == 8 * t * d * d + 4 * t * t * d);
  CHECK(g.flops().in(Region::kMisc) == 0);
}

TEST_CASE("cross-attention examples and errors") {
  Graph<double> g;
  const std::size_t d = 8;
  CrossAttentionParams<double> p;
  p.w_q = g.constant(rand({d, d}, 1));
  p.w_k = g.constant(rand({d, d}, 2));
  auto x1 = g.constant(rand({4, d}, 3));

  auto zero = cross_attention(x1, g.constant(Tensor64({5, d})), p).value();
  for (double v : zero.data()) CHECK(v == 0.0);

  auto q1 = g.constant(rand({1, d}, 4));
  auto k1 = g.constant(rand({1, d}, 5));
  auto y = cross_attention(q1, k1, p).value();
  CHECK(max_abs_diff(y, matmul(k1, p.w_k).value()) < 1e-14);

  CrossAttentionParams<double> full = p;
  full.mode = CaMode::kFull;
  CHECK_THROWS_AS(cross_attention(x1, k1, full), ConfigError);
  CrossAttentionParams<double> literal_with_v = p;
  literal_with_v.w_v = g.constant(rand({d, d}, 6));
  CHECK_THROWS_AS(cross_attention(x1, k1, literal_with_v), ConfigError);
  CHECK_THROWS_AS(cross_attention(x1, g.constant(rand({2, d + 1}, 7)), p), DimensionError);
  CrossAttentionParams<double> three = p;
  three.heads = 3;
  CHECK_THROWS_AS(cross_attention(x1, k1, three), ConfigError);
  CHECK(parse_ca_mode("full") == CaMode::kFull);
  CHECK_THROWS_AS(parse_ca_mode("half"), ConfigError);
}

TEST_CASE("cross-attention gradients match central differences") {
  for (CaMode mode : {CaMode::kLiteral, CaMode::kFull}) {
    for (std::size_t heads : {1u, 2u}) {
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const std::size_t d = 8;
        std::vector<NamedParam<double>> params = {{"x1", rand({4, d}, seed * 7 + 1), true},
                                                  {"x2", rand({3, d}, seed * 7 + 2), true},
                                                  {"w_q", rand({d, d}, seed * 7 + 3), true},
                                                  {"w_k", rand({d, d}, seed * 7 + 4), true}};
        if (mode == CaMode::kFull) {
          params.push_back({"w_v", rand({d, d}, seed * 7 + 5), true});
          params.push_back({"w_o", rand({d, d}, seed * 7 + 6), true});
        }
        const Tensor64 proj = rand({4, d}, seed * 7 + 9);
        LossFn<double> f = [&](Graph<double>&, std::span<const Var<double>> v) {
          CrossAttentionParams<double> p;
          p.w_q = v[2];
          p.w_k = v[3];
          if (mode == CaMode::kFull) {
            p.w_v = v[4];
            p.w_o = v[5];
          }
          p.mode = mode;
          p.heads = heads;
          return dot_constant(cross_attention(v[0], v[1], p), proj);
        };
        const GradCheckReport r = grad_check(f, params, {});
        INFO(to_string(mode) << " heads " << heads << " seed " << seed << ": " << r.summary());
        CHECK(r.passed);
      }
    }
  }
}

TEST_CASE("self-attention gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t d = 8;
    std::vector<NamedParam<double>> params = {{"x", rand({5, d}, seed * 5 + 1), true},
                                              {"w_q", rand({d, d}, seed * 5 + 2), true},
                                              {"w_k", rand({d, d}, seed * 5 + 3), true},
                                              {"w_v", rand({d, d}, seed * 5 + 4), true},
                                              {"w_o", rand({d, d}, seed * 5 + 5), true}};
    const Tensor64 proj = rand({5, d}, seed * 5 + 6);
    LossFn<double> f = [&](Graph<double>&, std::span<const Var<double>> v) {
      return dot_constant(self_attention(v[0], SelfAttentionParams<double>{v[1], v[2], v[3], v[4], 2}), proj);
    };
    const GradCheckReport r = grad_check(f, params, {});
    INFO("seed " << seed << ": " << r.summary());
    CHECK(r.passed);
  }
}

TEST_CASE("attention mass partition") {
  SUBCASE("uniform n=4 m=4") {
    const Tensor64 w = Tensor64::full({8, 8}, 1.0 / 8.0);
    const auto r = attention_mass_partition(w, 4, 4, PromptLayout::kPromptsLast);
    CHECK(r.mass_ep == 0.5);
    CHECK(r.mass_ee == 0.5);
    CHECK(r.mass_pe == 0.5);
    CHECK(r.mass_pp == 0.5);
    CHECK(r.per_query_prompt_mass.size() == 8);
  }
  SUBCASE("m = 0") {
    Graph<double> g;
    const Tensor64 w = softmax_rows(g.constant(rand({5, 5}, 3))).value();
    const auto r = attention_mass_partition(w, 5, 0, PromptLayout::kPromptsFirst);
    CHECK(std::abs(r.mass_ee - 1.0) < 1e-12);
    CHECK(r.mass_ep == 0.0);
    CHECK(r.mass_pe == 0.0);
    CHECK(r.mass_pp == 0.0);
  }
  SUBCASE("uniform n=197 m=196") {
    const Tensor64 w = Tensor64::full({393, 393}, 1.0 / 393.0);
    const auto r = attention_mass_partition(w, 197, 196, PromptLayout::kPromptsLast);
    CHECK(std::abs(r.mass_ep - 196.0 / 393.0) < 1e-12);
    CHECK(r.mass_ep == doctest::Approx(0.4987).epsilon(1e-4));
  }
  SUBCASE("layouts and conservation") {
    Graph<double> g;
    const Tensor64 w = softmax_rows(g.constant(rand({7, 7}, 9, -3, 3))).value();
    for (auto layout : {PromptLayout::kPromptsFirst, PromptLayout::kPromptsLast, PromptLayout::kAfterCls}) {
      const auto r = attention_mass_partition(w, 4, 3, layout);
      CHECK(std::abs(r.mass_ee + r.mass_ep - 1.0) < 1e-6);
      CHECK(std::abs(r.mass_pe + r.mass_pp - 1.0) < 1e-6);
      for (double v : {r.mass_ee, r.mass_ep, r.mass_pe, r.mass_pp}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(is_prompt_index(1, 4, 3, PromptLayout::kAfterCls));
    CHECK_FALSE(is_prompt_index(0, 4, 3, PromptLayout::kAfterCls));
    CHECK_FALSE(is_prompt_index(4, 4, 3, PromptLayout::kAfterCls));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(attention_mass_partition(Tensor64::full({4, 4}, 0.3), 2, 2, PromptLayout::kPromptsLast),
                    InputError);
    CHECK_THROWS_AS(attention_mass_partition(Tensor64::full({4, 4}, 0.25), 2, 1, PromptLayout::kPromptsLast),
                    DimensionError);
  }
}
