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
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cvpt/datasets.hpp"
#include "cvpt/model.hpp"
#include "cvpt/params.hpp"

namespace cvpt {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Moments for the trainable tensors only, in parameter-store order.
struct OptimizerState {
  AdamWConfig hp;
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor64> m;
  std::vector<Tensor64> v;
};

/// Adam with decoupled weight decay:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps) + lr * wd * p
/// Moment arithmetic runs in double.
class AdamW {
 public:
  AdamW(const ParamStore<float>& params, FreezePolicy policy, AdamWConfig hp = {});

  /// `grads` must name exactly the trainable tensors; a gradient for a frozen
  /// tensor or a missing trainable gradient raises PolicyError. `lr` overrides
  /// hp.lr for this step (schedules).
  void step(ParamStore<float>& params, const ParamStore<float>& grads, double lr);
  void step(ParamStore<float>& params, const ParamStore<float>& grads) { step(params, grads, state_.hp.lr); }

  const OptimizerState& state() const { return state_; }
  const FreezePolicy& policy() const { return policy_; }

 private:
  FreezePolicy policy_;
  OptimizerState state_;
};

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  LrSchedule schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;
  FreezePolicy policy = FreezePolicy::linear_probe();
  /// Steps per history row; 0 means one row per epoch.
  std::size_t log_every = 0;
};

/// Learning rate at step t (0-based) of `steps`: cosine decays to zero.
double scheduled_lr(const TrainConfig& cfg, std::size_t t);

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0.0;       ///< mean training loss since the previous row
  double train_acc = 0.0;  ///< accuracy of the training forwards since the previous row
  double eval_acc = std::numeric_limits<double>::quiet_NaN();  ///< NaN without an eval set
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<double> step_losses;
};

/// Called after every optimizer step with (step index, batch loss).
using StepCallback = std::function<void(std::size_t, double)>;

/// Minibatch training of the parameters selected by cfg.policy. Each sample
/// runs on its own tape; the batch gradient is the mean over samples summed
/// in batch order. Epochs reshuffle with Rng(cfg.seed).split(epoch). Frozen
/// tensors are verified bit-identical at the end (PolicyError otherwise). A
/// non-finite loss raises NumericError naming the step and parameter norms.
TrainResult train(Model<float>& model, const LabeledSet& data, const TrainConfig& cfg,
                  const LabeledSet* eval = nullptr, const StepCallback& on_step = {});

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);

/// Top-1 accuracy. `batch_size` only groups the work; results do not depend on it.
double evaluate(const Model<float>& model, const LabeledSet& data, std::size_t batch_size = 32);

/// history as CSV with columns step,loss,train_acc,eval_acc.
std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace cvpt
