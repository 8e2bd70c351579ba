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
#include <limits>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"
#include "cvpt/train.hpp"
#include "oracle_fixtures.hpp"
#include "test_util.hpp"

using namespace cvpt;
using testutil::tiny_config;

namespace {

Tensor from_vector(const std::vector<double>& v, Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

LabeledSet tiny_data(std::size_t classes, std::size_t per_class, double difficulty, std::uint64_t seed) {
  SynthSpec s;
  s.classes = classes;
  s.per_class = per_class;
  s.difficulty = difficulty;
  s.seed = seed;
  s.image_size = 16;
  return synth_generate(s);
}

TrainConfig quick(std::size_t steps, const FreezePolicy& policy, double lr = 1e-2) {
  TrainConfig tc;
  tc.steps = steps;
  tc.batch_size = 8;
  tc.lr = lr;
  tc.policy = policy;
  return tc;
}

}  // namespace

TEST_CASE("cross-entropy matches the reference implementation") {
  Graph<double> g;
  Tensor64 logits({1, 5});
  for (std::size_t i = 0; i < 5; ++i) logits[i] = oracle::kCrossEntropyLogits[i];
  Var<double> x = g.parameter(logits, true);
  Var<double> loss = cross_entropy(x, 3);
  CHECK(std::abs(loss.value()[0] - oracle::kCrossEntropyLoss[0]) < 1e-12);
  g.backward(loss);
  CHECK(testutil::max_diff(*g.grad(x), oracle::kCrossEntropyGrad) < 1e-12);
}

TEST_CASE("AdamW matches the reference optimizer over three steps") {
  ParamStore<float> params;
  params.add("w", from_vector(oracle::kAdamWInit, {2, 3}));
  AdamWConfig hp;
  hp.lr = 0.01;
  hp.weight_decay = 0.1;
  AdamW opt(params, FreezePolicy({"w"}), hp);
  const std::vector<double>* grads[] = {&oracle::kAdamWGrad0, &oracle::kAdamWGrad1, &oracle::kAdamWGrad2};
  const std::vector<double>* after[] = {&oracle::kAdamWAfter0, &oracle::kAdamWAfter1, &oracle::kAdamWAfter2};
  for (int s = 0; s < 3; ++s) {
    ParamStore<float> g;
    g.add("w", from_vector(*grads[s], {2, 3}));
    opt.step(params, g);
    CHECK(testutil::max_diff(params.at("w"), *after[s]) < 1e-6);
  }
  CHECK(opt.state().step == 3);
}

TEST_CASE("AdamW examples") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    ParamStore<float> p;
    p.add("w", Tensor({3}, {1.0f, -2.0f, 0.5f}));
    AdamWConfig hp;
    hp.weight_decay = 0.0;
    AdamW opt(p, FreezePolicy({"w"}), hp);
    ParamStore<float> g;
    g.add("w", Tensor({3}));
    for (int i = 0; i < 5; ++i) opt.step(p, g);
    CHECK(p.at("w")[0] == 1.0f);
    CHECK(p.at("w")[1] == -2.0f);
  }
  SUBCASE("the first step moves each coordinate by about lr against the gradient sign") {
    ParamStore<float> p;
    p.add("w", Tensor({3}, {0.0f, 0.0f, 0.0f}));
    AdamW opt(p, FreezePolicy({"w"}), AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    ParamStore<float> g;
    g.add("w", Tensor({3}, {5.0f, -0.01f, 2.0f}));
    opt.step(p, g);
    CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-5));
    CHECK(p.at("w")[1] == doctest::Approx(0.1).epsilon(1e-4));
  }
  SUBCASE("policy violations") {
    ParamStore<float> p;
    p.add("head.weight", Tensor({2}));
    p.add("blocks.0.sa.w_q", Tensor({2}));
    AdamW opt(p, FreezePolicy::linear_probe());
    ParamStore<float> frozen_grad;
    frozen_grad.add("head.weight", Tensor({2}));
    frozen_grad.add("blocks.0.sa.w_q", Tensor({2}));
    CHECK_THROWS_AS(opt.step(p, frozen_grad), PolicyError);
    CHECK_THROWS_AS(opt.step(p, ParamStore<float>{}), PolicyError);
    ParamStore<float> wrong;
    wrong.add("head.weight", Tensor({3}));
    CHECK_THROWS_AS(opt.step(p, wrong), DimensionError);
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  tc.steps = 100;
  tc.lr = 0.5;
  CHECK(scheduled_lr(tc, 0) == doctest::Approx(0.5));
  CHECK(scheduled_lr(tc, 50) == doctest::Approx(0.25).epsilon(0.02));
  CHECK(scheduled_lr(tc, 99) < 0.01);
  for (std::size_t t = 1; t < 100; ++t) CHECK(scheduled_lr(tc, t) <= scheduled_lr(tc, t - 1));
  tc.schedule = LrSchedule::kConstant;
  CHECK(scheduled_lr(tc, 99) == 0.5);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const std::vector<float> v = {1.0f, 3.0f, 3.0f, -1.0f};
  CHECK(argmax(v) == 1);
  CHECK_THROWS_AS(argmax(std::span<const float>{}), InputError);
}

TEST_CASE("training is deterministic and respects the freeze policy") {
  const LabeledSet data = tiny_data(5, 8, 1.0, 7);
  const ViTConfig c = tiny_config(BlockVariant::kCvpt, 4);
  auto run = [&] {
    Model<float> m = build_model(c);
    const TrainResult r = train(m, data, quick(12, FreezePolicy::prompts_and_head()));
    return std::make_pair(m, r);
  };
  const auto [a, ra] = run();
  const auto [b, rb] = run();
  CHECK(ra.step_losses == rb.step_losses);
  const Model<float> init = build_model(c);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& e = a.params.entries()[i];
    CHECK(bit_equal(e.value, b.params.entries()[i].value));
    const bool trainable = FreezePolicy::prompts_and_head().trainable(e.name);
    CHECK(bit_equal(e.value, init.params.at(e.name)) != trainable);
  }
  CHECK(history_csv(ra.history) == history_csv(rb.history));
  CHECK(history_csv(ra.history).rfind("step,loss,train_acc,eval_acc", 0) == 0);
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  const LabeledSet data = tiny_data(5, 4, 1.0, 8);
  Model<float> m = build_model(tiny_config(BlockVariant::kVpt, 2));
  const Model<float> init = m;
  train(m, data, quick(5, FreezePolicy::prompts_and_head(), 0.0));
  for (const auto& e : m.params.entries()) CHECK(bit_equal(e.value, init.params.at(e.name)));
}

TEST_CASE("training loss decreases for every variant") {
  const LabeledSet data = tiny_data(5, 8, 0.5, 9);
  ViTConfig shallow = tiny_config(BlockVariant::kVpt, 4);
  shallow.vpt_mode = VptMode::kShallow;
  ViTConfig full = tiny_config(BlockVariant::kCvpt, 4);
  full.ca_mode = CaMode::kFull;
  for (const ViTConfig& c : {tiny_config(), tiny_config(BlockVariant::kVpt, 4), shallow,
                             tiny_config(BlockVariant::kCvpt, 4), full}) {
    Model<float> m = build_model(c);
    const TrainResult r = train(m, data, quick(40, default_policy(c), 3e-2));
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      head += r.step_losses[i];
      tail += r.step_losses[r.step_losses.size() - 1 - i];
    }
    INFO(c.variant_label() << " " << head / 5 << " -> " << tail / 5);
    CHECK(tail < head);
  }
}

TEST_CASE("linear probing separates the easiest synthetic task") {
  ViTConfig c = tiny_config();
  c.num_classes = 4;
  const LabeledSet train_set = tiny_data(4, 25, 0.0, 1);
  const LabeledSet eval_set = tiny_data(4, 25, 0.0, 2);
  Model<float> m = build_model(c);
  TrainConfig tc = quick(200, FreezePolicy::linear_probe(), 5e-2);
  tc.batch_size = 16;
  train(m, train_set, tc);
  CHECK(evaluate(m, eval_set) >= 0.95);
}

TEST_CASE("evaluation") {
  ViTConfig c = tiny_config();
  const LabeledSet data = tiny_data(5, 6, 1.0, 3);
  Model<float> m = build_model(c);
  // a zero head ties every logit, so every sample is predicted as class 0
  m.params.at("head.weight") = Tensor(m.params.at("head.weight").shape());
  CHECK(evaluate(m, data) == doctest::Approx(1.0 / 5.0));

  const Model<float> r = build_model(c);
  CHECK(evaluate(r, data, 1) == evaluate(r, data, 32));
  CHECK_THROWS_AS(evaluate(r, LabeledSet{}), InputError);
}

TEST_CASE("training errors and diagnostics") {
  const LabeledSet data = tiny_data(5, 4, 1.0, 4);
  ViTConfig c = tiny_config();
  c.num_classes = 7;
  Model<float> wrong = build_model(c);
  CHECK_THROWS_AS(train(wrong, data, quick(2, FreezePolicy::linear_probe())), ConfigError);

  Model<float> m = build_model(tiny_config());
  TrainConfig zero_batch = quick(2, FreezePolicy::linear_probe());
  zero_batch.batch_size = 0;
  CHECK_THROWS_AS(train(m, data, zero_batch), ConfigError);

  m.params.at("head.weight")[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(train(m, data, quick(2, FreezePolicy::linear_probe())),
                       doctest::Contains("training step 0"), NumericError);
}

TEST_CASE("eval history and step callback") {
  const LabeledSet data = tiny_data(5, 4, 1.0, 5);
  Model<float> m = build_model(tiny_config());
  std::vector<std::size_t> seen;
  TrainConfig tc = quick(6, FreezePolicy::linear_probe());
  tc.log_every = 3;
  const TrainResult r = train(m, data, tc, &data, [&](std::size_t t, double) { seen.push_back(t); });
  CHECK(seen.size() == 6);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[1].step == 6);
  CHECK_FALSE(std::isnan(r.history[1].eval_acc));
  CHECK(r.step_losses.size() == 6);
}
