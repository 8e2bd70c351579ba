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

#include "cvpt/model.hpp"

#include <algorithm>
#include <cmath>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

namespace {

std::string block_name(std::size_t i, const char* leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor xavier(const Rng& stream, const std::string& name, std::size_t fan_in, std::size_t fan_out) {
  Rng r = stream.split(name);
  const double b = xavier_bound(fan_in, fan_out);
  return uniform_tensor<float>({fan_in, fan_out}, -b, b, r);
}

}  // namespace

bool ViTConfig::has_ca(std::size_t block) const {
  if (variant != BlockVariant::kCvpt) return false;
  if (ca_blocks.empty()) return true;
  return std::find(ca_blocks.begin(), ca_blocks.end(), block) != ca_blocks.end();
}

std::string ViTConfig::variant_label() const {
  switch (variant) {
    case BlockVariant::kPlain:
      return "plain";
    case BlockVariant::kVpt:
      return vpt_mode == VptMode::kShallow ? "vpt-shallow" : "vpt-deep";
    case BlockVariant::kCvpt:
      return "cvpt";
  }
  return "?";
}

void ViTConfig::set_variant_label(const std::string& label) {
  if (label == "plain") {
    variant = BlockVariant::kPlain;
  } else if (label == "vpt-shallow") {
    variant = BlockVariant::kVpt;
    vpt_mode = VptMode::kShallow;
  } else if (label == "vpt-deep" || label == "vpt") {
    variant = BlockVariant::kVpt;
    vpt_mode = VptMode::kDeep;
  } else if (label == "cvpt") {
    variant = BlockVariant::kCvpt;
  } else {
    throw ConfigError("unknown variant '" + label + "' (expected plain, vpt-shallow, vpt-deep, cvpt)");
  }
}

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (channels == 0 || d == 0 || depth == 0 || num_classes < 2) {
    throw ConfigError("channels, d and depth must be positive and num_classes >= 2");
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " does not divide d=" + std::to_string(d));
  }
  if (variant == BlockVariant::kPlain && prompts != 0) {
    throw ConfigError("plain variant takes no prompts");
  }
  if (variant != BlockVariant::kPlain && prompts == 0) {
    throw ConfigError(variant_label() + " needs at least one prompt");
  }
  if (variant == BlockVariant::kCvpt) {
    if (ca_heads == 0 || d % ca_heads != 0) {
      throw ConfigError("cross-attention head count " + std::to_string(ca_heads) + " does not divide d=" +
                        std::to_string(d));
    }
    if (ca_position < 1 || ca_position > 5) {
      throw ConfigError("ca_position must be in 1..5, got " + std::to_string(ca_position));
    }
    for (auto b : ca_blocks) {
      if (b >= depth) throw ConfigError("ca block index " + std::to_string(b) + " >= depth");
    }
  }
}

nlohmann::json to_json(const ViTConfig& c) {
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"channels", c.channels},
          {"d", c.d},
          {"depth", c.depth},
          {"heads", c.heads},
          {"num_classes", c.num_classes},
          {"variant", c.variant_label()},
          {"prompts", c.prompts},
          {"ca_mode", to_string(c.ca_mode)},
          {"ca_position", c.ca_position},
          {"ca_heads", c.ca_heads},
          {"ca_blocks", c.ca_blocks},
          {"seed", c.seed}};
}

ViTConfig config_from_json(const nlohmann::json& j) {
  ViTConfig c;
  try {
    c.image_size = j.at("image_size").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.set_variant_label(j.at("variant").get<std::string>());
    c.prompts = j.at("prompts").get<std::size_t>();
    c.ca_mode = parse_ca_mode(j.at("ca_mode").get<std::string>());
    c.ca_position = j.at("ca_position").get<int>();
    c.ca_heads = j.at("ca_heads").get<std::size_t>();
    c.ca_blocks = j.at("ca_blocks").get<std::vector<std::size_t>>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config metadata: ") + e.what());
  }
  c.validate();
  return c;
}

bool is_backbone_tensor(const std::string& name) {
  return !glob_match("head.*", name) && !glob_match("*prompts", name) && !glob_match("blocks.*.ca.*", name);
}

FreezePolicy default_policy(const ViTConfig& config) {
  return config.variant == BlockVariant::kPlain ? FreezePolicy::linear_probe() : FreezePolicy::prompts_and_head();
}

Model<float> build_model(const ViTConfig& config) {
  config.validate();
  const std::size_t d = config.d;
  const Rng root(config.seed);
  const Rng backbone = root.split("backbone");
  const Rng prompt_stream = root.split("prompts");
  const Rng ca_stream = root.split("ca");
  const Rng head_stream = root.split("head");

  Model<float> m{config, {}};
  auto& p = m.params;
  p.add("patch_embed.weight", xavier(backbone, "patch_embed.weight", config.patch_dim(), d));
  p.add("patch_embed.bias", Tensor({d}));
  {
    Rng r = backbone.split("cls_token");
    p.add("cls_token", normal_tensor<float>({1, d}, 0.02, r));
    Rng s = backbone.split("pos_embed");
    p.add("pos_embed", normal_tensor<float>({config.tokens(), d}, 0.02, s));
  }

  const double prompt_bound = std::sqrt(6.0 / static_cast<double>(d + d));
  auto add_prompts = [&](const std::string& name) {
    Rng r = prompt_stream.split(name);
    p.add(name, uniform_tensor<float>({config.prompts, d}, -prompt_bound, prompt_bound, r));
  };
  if (config.variant == BlockVariant::kVpt && config.vpt_mode == VptMode::kShallow) add_prompts("prompts");

  for (std::size_t i = 0; i < config.depth; ++i) {
    p.add(block_name(i, "ln1.gamma"), Tensor::full({d}, 1.0f));
    p.add(block_name(i, "ln1.beta"), Tensor({d}));
    for (const char* w : {"sa.w_q", "sa.w_k", "sa.w_v", "sa.w_o"}) {
      p.add(block_name(i, w), xavier(backbone, block_name(i, w), d, d));
    }
    p.add(block_name(i, "ln2.gamma"), Tensor::full({d}, 1.0f));
    p.add(block_name(i, "ln2.beta"), Tensor({d}));
    p.add(block_name(i, "mlp.fc1.weight"), xavier(backbone, block_name(i, "mlp.fc1.weight"), d, 4 * d));
    p.add(block_name(i, "mlp.fc1.bias"), Tensor({4 * d}));
    p.add(block_name(i, "mlp.fc2.weight"), xavier(backbone, block_name(i, "mlp.fc2.weight"), 4 * d, d));
    p.add(block_name(i, "mlp.fc2.bias"), Tensor({d}));

    const bool deep_vpt = config.variant == BlockVariant::kVpt && config.vpt_mode == VptMode::kDeep;
    if (deep_vpt || config.has_ca(i)) add_prompts(block_name(i, "prompts"));
    if (config.has_ca(i)) {
      std::vector<const char*> names = {"ca.w_q", "ca.w_k"};
      if (config.ca_mode == CaMode::kFull) names.insert(names.end(), {"ca.w_v", "ca.w_o"});
      for (const char* w : names) p.add(block_name(i, w), xavier(ca_stream, block_name(i, w), d, d));
    }
  }
  p.add("norm.gamma", Tensor::full({d}, 1.0f));
  p.add("norm.beta", Tensor({d}));
  p.add("head.weight", xavier(head_stream, "head.weight", d, config.num_classes));
  p.add("head.bias", Tensor({config.num_classes}));
  return m;
}

template <typename T>
BasicTensor<T> extract_patches(const BasicTensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("extract_patches: expected H x W x C, got " + shape_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("extract_patches: image " + shape_string(image.shape()) + " is not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  BasicTensor<T> out({gh * gw, patch * patch * c});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      auto row = out.row(py * gw + px);
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          const std::size_t base = ((py * patch + y) * w + (px * patch + x)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) row[k++] = image[base + ch];
        }
      }
    }
  }
  return out;
}

template <typename T>
Var<T> patch_embed(const BasicTensor<T>& image, std::size_t patch, const Var<T>& weight, const Var<T>& bias,
                   const Var<T>& cls, const Var<T>& pos) {
  auto& g = weight.graph();
  RegionScope<T> region(g, Region::kEmbed);
  Var<T> patches = g.constant(extract_patches(image, patch));
  Var<T> tokens = concat_rows<T>({cls, linear(patches, weight, bias)});
  if (tokens.shape() != pos.shape()) {
    throw DimensionError("patch_embed: tokens " + shape_string(tokens.shape()) + " vs positional embeddings " +
                         shape_string(pos.shape()));
  }
  return add(tokens, pos);
}

template <typename T>
BoundModel<T> bind_model(Graph<T>& g, const Model<T>& model, const FreezePolicy* policy) {
  BoundModel<T> b;
  b.model = &model;
  b.vars.reserve(model.params.size());
  for (const auto& e : model.params.entries()) {
    b.vars.push_back(g.parameter(e.value, policy != nullptr && policy->trainable(e.name)));
  }
  return b;
}

template <typename T>
EncoderBlockParams<T> block_params(const BoundModel<T>& bound, std::size_t i) {
  const ViTConfig& c = bound.model->config;
  EncoderBlockParams<T> p;
  p.ln1 = {bound[block_name(i, "ln1.gamma")], bound[block_name(i, "ln1.beta")]};
  p.ln2 = {bound[block_name(i, "ln2.gamma")], bound[block_name(i, "ln2.beta")]};
  p.sa = {bound[block_name(i, "sa.w_q")], bound[block_name(i, "sa.w_k")], bound[block_name(i, "sa.w_v")],
          bound[block_name(i, "sa.w_o")], c.heads};
  p.mlp = {bound[block_name(i, "mlp.fc1.weight")], bound[block_name(i, "mlp.fc1.bias")],
           bound[block_name(i, "mlp.fc2.weight")], bound[block_name(i, "mlp.fc2.bias")]};
  switch (c.variant) {
    case BlockVariant::kPlain:
      p.variant = BlockVariant::kPlain;
      break;
    case BlockVariant::kVpt:
      p.variant = BlockVariant::kVpt;
      if (c.vpt_mode == VptMode::kDeep) {
        p.prompts = bound[block_name(i, "prompts")];
      } else if (i == 0) {
        p.prompts = bound["prompts"];
      }
      break;
    case BlockVariant::kCvpt:
      if (!c.has_ca(i)) {
        p.variant = BlockVariant::kPlain;
        break;
      }
      p.variant = BlockVariant::kCvpt;
      p.ca_position = c.ca_position;
      p.prompts = bound[block_name(i, "prompts")];
      {
        CrossAttentionParams<T> ca;
        ca.w_q = bound[block_name(i, "ca.w_q")];
        ca.w_k = bound[block_name(i, "ca.w_k")];
        if (c.ca_mode == CaMode::kFull) {
          ca.w_v = bound[block_name(i, "ca.w_v")];
          ca.w_o = bound[block_name(i, "ca.w_o")];
        }
        ca.heads = c.ca_heads;
        ca.mode = c.ca_mode;
        p.ca = ca;
      }
      break;
  }
  return p;
}

template <typename T>
Var<T> model_forward(const BoundModel<T>& bound, const BasicTensor<T>& image, const ForwardOptions<T>& options) {
  const ViTConfig& c = bound.model->config;
  Var<T> x = patch_embed(image, c.patch_size, bound["patch_embed.weight"], bound["patch_embed.bias"],
                         bound["cls_token"], bound["pos_embed"]);
  VptState<T> state{x, std::nullopt};
  for (std::size_t i = 0; i < c.depth; ++i) {
    const BlockContext<T> ctx{options.probe, i};
    const EncoderBlockParams<T> p = block_params(bound, i);
    switch (p.variant) {
      case BlockVariant::kPlain:
        state.tokens = plain_block(state.tokens, p, ctx);
        break;
      case BlockVariant::kVpt:
        state = vpt_block(state, p, c.vpt_mode, i == 0, ctx, options.drop);
        break;
      case BlockVariant::kCvpt:
        state.tokens = cvpt_block(state.tokens, p, ctx);
        break;
    }
  }
  auto& g = x.graph();
  RegionScope<T> region(g, Region::kHead);
  Var<T> cls = layer_norm(slice_rows(state.tokens, 0, 1), bound["norm.gamma"], bound["norm.beta"]);
  return linear(cls, bound["head.weight"], bound["head.bias"]);
}

template <typename T>
BasicTensor<T> predict_logits(const Model<T>& model, const BasicTensor<T>& image, AttentionProbe<T>* probe) {
  Graph<T> g;
  BoundModel<T> bound = bind_model(g, model, nullptr);
  ForwardOptions<T> opts;
  opts.probe = probe;
  const auto& v = model_forward(bound, image, opts).value();
  return v.reshaped({v.size()});
}

Model<float> from_backbone(const Checkpoint& ckpt, const ViTConfig& config, CaInit ca_init) {
  Model<float> m = build_model(config);
  for (auto& e : m.params.entries()) {
    if (!is_backbone_tensor(e.name)) continue;
    if (!ckpt.tensors.contains(e.name)) {
      throw MissingTensorError("backbone checkpoint lacks tensor '" + e.name + "'");
    }
    const Tensor& src = ckpt.tensors.at(e.name);
    if (src.shape() != e.value.shape()) {
      throw DimensionError("backbone tensor '" + e.name + "' has shape " + shape_string(src.shape()) + ", expected " +
                           shape_string(e.value.shape()));
    }
    e.value = src;
  }
  if (ca_init == CaInit::kShared) {
    for (std::size_t i = 0; i < config.depth; ++i) {
      if (!config.has_ca(i)) continue;
      for (const char* w : {"w_q", "w_k", "w_v", "w_o"}) {
        const std::string ca = block_name(i, "ca.") + w;
        if (m.params.contains(ca)) m.params.at(ca) = m.params.at(block_name(i, "sa.") + w);
      }
    }
  }
  return m;
}

Model<float> load_checkpoint_with_weight_sharing(const Checkpoint& ckpt, const ViTConfig& config) {
  if (config.variant != BlockVariant::kCvpt) {
    throw ConfigError("weight-sharing load needs a cvpt config, got " + config.variant_label());
  }
  return from_backbone(ckpt, config, CaInit::kShared);
}

Checkpoint to_checkpoint(const Model<float>& model) {
  Checkpoint c;
  c.tensors = model.params;
  c.meta = {{"kind", "model"}, {"config", to_json(model.config)}};
  return c;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw FormatError("checkpoint metadata has no model config");
  Model<float> m = build_model(config_from_json(ckpt.meta.at("config")));
  for (auto& e : m.params.entries()) {
    if (!ckpt.tensors.contains(e.name)) throw MissingTensorError("checkpoint lacks tensor '" + e.name + "'");
    const Tensor& src = ckpt.tensors.at(e.name);
    if (src.shape() != e.value.shape()) {
      throw DimensionError("checkpoint tensor '" + e.name + "' has shape " + shape_string(src.shape()) +
                           ", expected " + shape_string(e.value.shape()));
    }
    e.value = src;
  }
  if (ckpt.tensors.size() != m.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, config expects " +
                      std::to_string(m.params.size()));
  }
  return m;
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  save_checkpoint_file(to_checkpoint(model), path);
}

Model<float> load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint_file(path)); }

ParamCount count_params(const Model<float>& model, const FreezePolicy& policy) {
  return count_params(model.params, policy);
}

#define CVPT_INSTANTIATE_MODEL(T)                                                                            \
  template BasicTensor<T> extract_patches(const BasicTensor<T>&, std::size_t);                               \
  template Var<T> patch_embed(const BasicTensor<T>&, std::size_t, const Var<T>&, const Var<T>&, const Var<T>&, \
                              const Var<T>&);                                                                \
  template BoundModel<T> bind_model(Graph<T>&, const Model<T>&, const FreezePolicy*);                        \
  template EncoderBlockParams<T> block_params(const BoundModel<T>&, std::size_t);                            \
  template Var<T> model_forward(const BoundModel<T>&, const BasicTensor<T>&, const ForwardOptions<T>&);      \
  template BasicTensor<T> predict_logits(const Model<T>&, const BasicTensor<T>&, AttentionProbe<T>*);

CVPT_INSTANTIATE_MODEL(float)
CVPT_INSTANTIATE_MODEL(double)

}  // namespace cvpt
