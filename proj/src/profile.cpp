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

#include "cvpt/profile.hpp"

#include <cstdio>

#include "cvpt/attention.hpp"
#include "cvpt/error.hpp"

namespace cvpt {

std::vector<ClsProfileRow> cls_attention_profile(const Model<float>& backbone, const Tensor& image, std::size_t layer,
                                                 const std::vector<std::size_t>& prompt_counts,
                                                 const ClsProfileOptions& options) {
  if (layer >= backbone.config.depth) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range for depth " +
                      std::to_string(backbone.config.depth));
  }
  Checkpoint ckpt;
  ckpt.tensors = backbone.params;
  std::vector<ClsProfileRow> rows;
  for (std::size_t m : prompt_counts) {
    ViTConfig c = backbone.config;
    c.ca_blocks.clear();
    c.seed = options.prompt_seed;
    c.prompts = m;
    if (m == 0) {
      c.variant = BlockVariant::kPlain;
    } else {
      c.variant = BlockVariant::kVpt;
      c.vpt_mode = VptMode::kDeep;
    }
    Model<float> model = from_backbone(ckpt, c, CaInit::kRandom);
    AttentionProbe<float> probe;
    probe.force_uniform_self = options.force_uniform;
    predict_logits(model, image, &probe);
    const Tensor w = probe.mean_weights(layer, AttentionKind::kSelf);
    const std::size_t n = c.tokens();
    const AttentionMassReport rep = attention_mass_partition(w, n, m, PromptLayout::kAfterCls);

    ClsProfileRow row;
    row.prompt_count = m;
    row.layer = layer;
    auto cls = w.row(0);
    double to_prompt = 0.0, to_patch = 0.0;
    for (std::size_t j = 1; j < cls.size(); ++j) {
      (is_prompt_index(j, n, m, PromptLayout::kAfterCls) ? to_prompt : to_patch) += cls[j];
    }
    const double rest = to_prompt + to_patch;
    row.prompt_mass = rest > 0.0 ? to_prompt / rest : 0.0;
    row.embedded_mass = rest > 0.0 ? to_patch / rest : 0.0;
    row.raw_prompt_mass = rep.per_query_prompt_mass[0];
    row.mass_ee = rep.mass_ee;
    rows.push_back(row);
  }
  return rows;
}

std::string cls_profile_csv(const std::vector<ClsProfileRow>& rows) {
  std::string out = "prompt_count,layer,prompt_mass,embedded_mass,raw_prompt_mass,mass_ee\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9f,%.9f,%.9f,%.9f\n", r.prompt_count, r.layer, r.prompt_mass,
                  r.embedded_mass, r.raw_prompt_mass, r.mass_ee);
    out += buf;
  }
  return out;
}

}  // namespace cvpt
