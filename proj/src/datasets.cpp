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

#include "cvpt/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "cvpt/checkpoint.hpp"
#include "cvpt/error.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

namespace {

constexpr double kGolden = 0.6180339887498949;

double frac(double x) { return x - std::floor(x); }

struct ClassSignature {
  double theta;
  double freq;
  std::vector<double> tint;
  std::vector<double> offset;
};

ClassSignature signature(std::size_t c, std::size_t channels) {
  const double tau = 2.0 * std::numbers::pi;
  ClassSignature s;
  s.theta = std::numbers::pi * frac(static_cast<double>(c) * kGolden);
  s.freq = 2.0 + 0.75 * static_cast<double>((c * 7) % 5);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double k = static_cast<double>(ch) / static_cast<double>(channels);
    s.tint.push_back(0.6 + 0.4 * std::cos(tau * (static_cast<double>(c) * 0.37 + k)));
    s.offset.push_back(0.15 * std::cos(tau * (static_cast<double>(c) * 0.23 + 0.31 * static_cast<double>(ch))));
  }
  return s;
}

std::size_t parse_size(const std::string& text, const std::string& what, const std::string& whole) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
    throw InputError("bad " + what + " '" + text + "' in data spec '" + whole + "'");
  }
  return v;
}

}  // namespace

Tensor LabeledSet::image(std::size_t i) const {
  if (i >= size()) throw InputError("image index " + std::to_string(i) + " out of range for " + std::to_string(size()));
  const std::size_t h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::size_t stride = h * w * c;
  auto src = images.data().subspan(i * stride, stride);
  return Tensor({h, w, c}, std::vector<float>(src.begin(), src.end()));
}

void LabeledSet::validate() const {
  if (images.rank() != 4) throw InputError("images must be N x H x W x C, got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw InputError("image count " + std::to_string(images.dim(0)) + " != label count " +
                     std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count) {
      throw InputError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " >= class count " +
                       std::to_string(class_count));
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("pixel value outside [0, 1]");
  }
}

LabeledSet synth_generate(const SynthSpec& spec) {
  if (spec.classes < 2) throw InputError("synthetic data needs at least 2 classes");
  if (spec.per_class == 0 || spec.image_size == 0 || spec.channels == 0) {
    throw InputError("synthetic data needs positive per_class, image_size and channels");
  }
  if (!(spec.difficulty >= 0.0) || !std::isfinite(spec.difficulty)) throw InputError("difficulty must be >= 0");

  const std::size_t n = spec.classes * spec.per_class;
  const std::size_t s = spec.image_size, ch = spec.channels;
  const double tau = 2.0 * std::numbers::pi;
  const double dif = spec.difficulty;

  std::vector<ClassSignature> sigs;
  for (std::size_t c = 0; c < spec.classes; ++c) sigs.push_back(signature(c + spec.class_offset, ch));

  LabeledSet set;
  set.class_count = spec.classes;
  set.images = Tensor({n, s, s, ch});
  set.labels.resize(n);
  auto out = set.images.data();
  const Rng root = Rng(spec.seed).split("synth");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    set.labels[i] = c;
    const ClassSignature& sig = sigs[c];
    Rng r = root.split(static_cast<std::uint64_t>(i));
    const double phase = r.uniform(0.0, tau);
    const double theta = sig.theta + 0.12 * dif * r.normal();
    const double freq = sig.freq * (1.0 + 0.08 * dif * r.normal());
    const double brightness = 0.08 * dif * r.normal();
    const double offset_scale = 1.0 / (1.0 + dif);
    const double ct = std::cos(theta), st = std::sin(theta);
    float* img = out.data() + i * s * s * ch;
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double u = (static_cast<double>(x) * ct + static_cast<double>(y) * st) / static_cast<double>(s);
        const double wave = std::sin(tau * freq * u + phase);
        for (std::size_t k = 0; k < ch; ++k) {
          double v = 0.5 + offset_scale * sig.offset[k] + brightness + 0.3 * sig.tint[k] * wave;
          if (dif > 0.0) v += 0.08 * dif * r.normal();
          img[(y * s + x) * ch + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return set;
}

SynthSpec parse_synth_spec(const std::string& text, std::uint64_t default_seed) {
  const std::string prefix = "synth:";
  if (text.rfind(prefix, 0) != 0) throw InputError("data spec '" + text + "' does not start with 'synth:'");
  std::string body = text.substr(prefix.size());
  SynthSpec spec;
  spec.seed = default_seed;
  if (auto hash = body.find('#'); hash != std::string::npos) {
    spec.seed = parse_size(body.substr(hash + 1), "seed", text);
    body = body.substr(0, hash);
  }
  const auto at = body.find('@');
  const auto x = body.find('x');
  if (at == std::string::npos || x == std::string::npos || x > at) {
    throw InputError("data spec '" + text + "' is not synth:<classes>x<per_class>@<difficulty>[#<seed>]");
  }
  spec.classes = parse_size(body.substr(0, x), "class count", text);
  spec.per_class = parse_size(body.substr(x + 1, at - x - 1), "per-class count", text);
  const std::string dif = body.substr(at + 1);
  auto [p, ec] = std::from_chars(dif.data(), dif.data() + dif.size(), spec.difficulty);
  if (ec != std::errc() || p != dif.data() + dif.size() || dif.empty()) {
    throw InputError("bad difficulty '" + dif + "' in data spec '" + text + "'");
  }
  return spec;
}

LabeledSet load_data(const std::string& spec, std::uint64_t default_seed) {
  if (spec.rfind("synth:", 0) == 0) return synth_generate(parse_synth_spec(spec, default_seed));
  return load_set(spec);
}

void save_set(const LabeledSet& set, const std::filesystem::path& path) {
  set.validate();
  Checkpoint c;
  c.tensors.add("images", set.images);
  const std::size_t n = set.labels.size();
  c.tensors.add("labels", Tensor({n}, std::vector<float>(set.labels.begin(), set.labels.end())));
  c.meta = {{"kind", "dataset"}, {"class_count", set.class_count}};
  save_checkpoint_file(c, path);
}

LabeledSet load_set(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint_file(path);
  if (!c.tensors.contains("images") || !c.tensors.contains("labels")) {
    throw MissingTensorError(path.string() + ": dataset file needs tensors 'images' and 'labels'");
  }
  if (!c.meta.contains("class_count")) throw FormatError(path.string() + ": dataset metadata lacks class_count");
  LabeledSet set;
  set.images = c.tensors.at("images");
  set.class_count = c.meta.at("class_count").get<std::size_t>();
  for (float v : c.tensors.at("labels").data()) {
    if (!(v >= 0.0f) || v != std::floor(v)) throw FormatError(path.string() + ": non-integer label");
    set.labels.push_back(static_cast<std::size_t>(v));
  }
  set.validate();
  return set;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng r = Rng(seed).split("shuffle");
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

LabeledSet take(const LabeledSet& set, std::size_t count) {
  count = std::min(count, set.size());
  if (count == 0) throw InputError("take: empty result");
  const std::size_t stride = set.images.size() / set.size();
  LabeledSet out;
  out.class_count = set.class_count;
  auto src = set.images.data().subspan(0, count * stride);
  Shape shape = set.images.shape();
  shape[0] = count;
  out.images = Tensor(shape, std::vector<float>(src.begin(), src.end()));
  out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

}  // namespace cvpt
