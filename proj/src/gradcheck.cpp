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

#include "cvpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cvpt/error.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

const GradCheckEntry& GradCheckReport::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw MissingTensorError("grad check report has no entry '" + name + "'");
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << "loss=" << loss << (passed ? " PASS" : " FAIL") << '\n';
  for (const auto& e : entries) {
    os << "  " << e.name << ": ";
    if (e.frozen) {
      os << "frozen" << (e.passed ? "" : " (gradient reached frozen tensor)") << '\n';
      continue;
    }
    os << "checked=" << e.checked << " max_rel_err=" << e.max_rel_err << " max_abs_err=" << e.max_abs_err
       << (e.passed ? "" : " FAIL") << '\n';
  }
  return os.str();
}

double relative_error(double tape, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(tape), std::abs(numeric), abs_floor});
  return std::abs(tape - numeric) / denom;
}

namespace {

template <typename T>
Var<T> evaluate(const LossFn<T>& f, const std::vector<NamedParam<T>>& params, bool with_grad, Graph<T>& g,
                std::vector<Var<T>>& bound) {
  bound.clear();
  for (const auto& p : params) bound.push_back(g.parameter(p.value, with_grad && p.trainable));
  Var<T> loss = f(g, bound);
  if (loss.value().size() != 1) {
    throw DimensionError("grad_check: loss must have one element, got " + shape_string(loss.shape()));
  }
  if (!std::isfinite(static_cast<double>(loss.value()[0]))) {
    throw NumericError("grad_check: loss is not finite");
  }
  return loss;
}

template <typename T>
double loss_at(const LossFn<T>& f, const std::vector<NamedParam<T>>& params) {
  Graph<T> g;
  std::vector<Var<T>> bound;
  return evaluate(f, params, false, g, bound).value()[0];
}

std::vector<std::size_t> pick_coords(std::size_t size, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || size <= max_coords) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const LossFn<T>& f, std::vector<NamedParam<T>>& params, const GradCheckOptions& options) {
  if (options.step < 1e-4 || options.step > 1e-2) {
    throw ConfigError("grad_check: step must lie in [1e-4, 1e-2]");
  }
  GradCheckReport report;
  std::vector<BasicTensor<T>> tape_grads(params.size());
  {
    Graph<T> g;
    std::vector<Var<T>> bound;
    Var<T> loss = evaluate(f, params, true, g, bound);
    report.loss = loss.value()[0];
    g.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (const auto* gr = g.grad(bound[i])) tape_grads[i] = *gr;
    }
  }

  Rng rng(options.seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    GradCheckEntry e;
    e.name = p.name;
    if (!p.trainable) {
      e.frozen = true;
      e.passed = tape_grads[i].empty();
      report.passed = report.passed && e.passed;
      report.entries.push_back(e);
      continue;
    }
    BasicTensor<T> tape = tape_grads[i].empty() ? BasicTensor<T>(p.value.shape()) : tape_grads[i];
    Rng sub = rng.split(p.name);
    for (std::size_t c : pick_coords(p.value.size(), options.max_coords, sub)) {
      const T original = p.value[c];
      p.value[c] = static_cast<T>(original + options.step);
      const T plus_arg = p.value[c];
      const double plus = loss_at(f, params);
      p.value[c] = static_cast<T>(original - options.step);
      const T minus_arg = p.value[c];
      const double minus = loss_at(f, params);
      p.value[c] = original;
      // Divide by the representable perturbation actually applied.
      const double numeric = (plus - minus) / (static_cast<double>(plus_arg) - static_cast<double>(minus_arg));
      const double analytic = tape[c];
      e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic, numeric, options.abs_floor));
      e.max_abs_err = std::max(e.max_abs_err, std::abs(analytic - numeric));
      ++e.checked;
    }
    e.passed = e.max_rel_err < options.tolerance;
    report.passed = report.passed && e.passed;
    report.entries.push_back(e);
  }
  return report;
}

template GradCheckReport grad_check<float>(const LossFn<float>&, std::vector<NamedParam<float>>&,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const LossFn<double>&, std::vector<NamedParam<double>>&,
                                            const GradCheckOptions&);

}  // namespace cvpt
