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

#include "cvpt/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

AdamW::AdamW(const ParamStore<float>& params, FreezePolicy policy, AdamWConfig hp) : policy_(std::move(policy)) {
  state_.hp = hp;
  for (const auto& e : params.entries()) {
    if (!policy_.trainable(e.name)) continue;
    state_.names.push_back(e.name);
    state_.m.emplace_back(e.value.shape());
    state_.v.emplace_back(e.value.shape());
  }
}

void AdamW::step(ParamStore<float>& params, const ParamStore<float>& grads, double lr) {
  for (const auto& g : grads.entries()) {
    if (!policy_.trainable(g.name)) {
      throw PolicyError("gradient supplied for frozen tensor '" + g.name + "' (policy " + policy_.describe() + ")");
    }
  }
  for (const auto& name : state_.names) {
    if (!grads.contains(name)) throw PolicyError("missing gradient for trainable tensor '" + name + "'");
  }
  state_.step += 1;
  const AdamWConfig& hp = state_.hp;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < state_.names.size(); ++k) {
    auto& p = params.at(state_.names[k]);
    const auto& g = grads.at(state_.names[k]);
    if (g.shape() != p.shape()) {
      throw DimensionError("gradient for '" + state_.names[k] + "' has shape " + shape_string(g.shape()) +
                           ", parameter has " + shape_string(p.shape()));
    }
    auto pd = p.data();
    auto gd = g.data();
    auto md = state_.m[k].data();
    auto vd = state_.v[k].data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gd[i];
      md[i] = hp.beta1 * md[i] + (1.0 - hp.beta1) * gi;
      vd[i] = hp.beta2 * vd[i] + (1.0 - hp.beta2) * gi * gi;
      const double mhat = c1 > 0.0 ? md[i] / c1 : md[i];
      const double vhat = c2 > 0.0 ? vd[i] / c2 : vd[i];
      const double pi = pd[i];
      pd[i] = static_cast<float>(pi - lr * mhat / (std::sqrt(vhat) + hp.eps) - lr * hp.weight_decay * pi);
    }
  }
}

double scheduled_lr(const TrainConfig& cfg, std::size_t t) {
  if (cfg.schedule == LrSchedule::kConstant || cfg.steps == 0) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.steps)));
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw InputError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double evaluate(const Model<float>& model, const LabeledSet& data, std::size_t batch_size) {
  if (data.size() == 0) throw InputError("evaluate: empty dataset");
  std::size_t correct = 0;
  for (const auto& batch : batch_iter(data.size(), batch_size, 0, false)) {
    for (std::size_t i : batch) {
      if (argmax(predict_logits(model, data.image(i)).data()) == data.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::string norm_report(const ParamStore<float>& params, const FreezePolicy& policy) {
  std::ostringstream os;
  for (const auto& e : params.entries()) {
    if (!policy.trainable(e.name)) continue;
    os << "\n  " << e.name << " l2=" << e.value.l2_norm();
  }
  return os.str();
}

}  // namespace

TrainResult train(Model<float>& model, const LabeledSet& data, const TrainConfig& cfg, const LabeledSet* eval,
                  const StepCallback& on_step) {
  if (data.size() == 0) throw InputError("train: empty dataset");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (data.class_count != model.config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.class_count) + " classes, model head has " +
                      std::to_string(model.config.num_classes));
  }

  std::vector<std::size_t> frozen_ids;
  std::vector<Tensor> frozen_init;
  std::vector<std::size_t> trainable_ids;
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    const auto& e = model.params.entries()[k];
    if (cfg.policy.trainable(e.name)) {
      trainable_ids.push_back(k);
    } else {
      frozen_ids.push_back(k);
      frozen_init.push_back(e.value);
    }
  }

  AdamW opt(model.params, cfg.policy, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t log_every = cfg.log_every == 0 ? per_epoch : cfg.log_every;

  TrainResult result;
  std::vector<std::vector<std::size_t>> batches;
  double window_loss = 0.0;
  std::size_t window_steps = 0, window_correct = 0, window_seen = 0;

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const std::size_t epoch = t / per_epoch;
    if (t % per_epoch == 0) batches = batch_iter(data.size(), cfg.batch_size, Rng(cfg.seed).split(epoch).next_u64(), true);
    const auto& batch = batches[t % per_epoch];

    std::vector<Tensor64> acc;
    for (std::size_t k : trainable_ids) acc.emplace_back(model.params.entries()[k].value.shape());
    double batch_loss = 0.0;
    try {
      for (std::size_t i : batch) {
        Graph<float> g;
        BoundModel<float> bound = bind_model(g, model, &cfg.policy);
        Var<float> logits = model_forward(bound, data.image(i));
        Var<float> loss = cross_entropy(logits, data.labels[i]);
        batch_loss += loss.value()[0];
        if (argmax(logits.value().data()) == data.labels[i]) ++window_correct;
        g.backward(loss);
        for (std::size_t j = 0; j < trainable_ids.size(); ++j) {
          const Tensor* gr = g.grad(bound.vars[trainable_ids[j]]);
          if (gr == nullptr) continue;
          auto a = acc[j].data();
          auto s = gr->data();
          for (std::size_t q = 0; q < a.size(); ++q) a[q] += s[q];
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("non-finite value at training step " + std::to_string(t) + ": " + e.what() +
                         "\nparameter norms:" + norm_report(model.params, cfg.policy));
    }
    batch_loss /= static_cast<double>(batch.size());
    if (!std::isfinite(batch_loss)) {
      throw NumericError("non-finite loss at training step " + std::to_string(t) +
                         "\nparameter norms:" + norm_report(model.params, cfg.policy));
    }

    ParamStore<float> grads;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t j = 0; j < trainable_ids.size(); ++j) {
      Tensor gt(acc[j].shape());
      auto a = acc[j].data();
      auto o = gt.data();
      for (std::size_t q = 0; q < o.size(); ++q) o[q] = static_cast<float>(a[q] * inv);
      grads.add(model.params.entries()[trainable_ids[j]].name, std::move(gt));
    }
    opt.step(model.params, grads, scheduled_lr(cfg, t));

    result.step_losses.push_back(batch_loss);
    if (on_step) on_step(t, batch_loss);
    window_loss += batch_loss;
    window_steps += 1;
    window_seen += batch.size();

    if ((t + 1) % log_every == 0 || t + 1 == cfg.steps) {
      HistoryRow row;
      row.step = t + 1;
      row.loss = window_loss / static_cast<double>(window_steps);
      row.train_acc = static_cast<double>(window_correct) / static_cast<double>(window_seen);
      if (eval != nullptr) row.eval_acc = evaluate(model, *eval);
      result.history.push_back(row);
      window_loss = 0.0;
      window_steps = window_correct = window_seen = 0;
    }
  }

  for (std::size_t j = 0; j < frozen_ids.size(); ++j) {
    const auto& e = model.params.entries()[frozen_ids[j]];
    if (!bit_equal(e.value, frozen_init[j])) {
      throw PolicyError("frozen tensor '" + e.name + "' changed during training");
    }
  }
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "step,loss,train_acc,eval_acc\n";
  char buf[128];
  for (const auto& r : history) {
    if (std::isnan(r.eval_acc)) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.4f,\n", r.step, r.loss, r.train_acc);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.4f,%.4f\n", r.step, r.loss, r.train_acc, r.eval_acc);
    }
    out += buf;
  }
  return out;
}

}  // namespace cvpt
