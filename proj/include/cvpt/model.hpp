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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvpt/attention.hpp"
#include "cvpt/blocks.hpp"
#include "cvpt/checkpoint.hpp"
#include "cvpt/graph.hpp"
#include "cvpt/params.hpp"

namespace cvpt {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t d = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t num_classes = 10;
  BlockVariant variant = BlockVariant::kPlain;
  VptMode vpt_mode = VptMode::kDeep;
  std::size_t prompts = 0;
  CaMode ca_mode = CaMode::kLiteral;
  int ca_position = 3;
  std::size_t ca_heads = 1;
  /// Blocks that receive cross-attention; empty means every block.
  std::vector<std::size_t> ca_blocks;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  /// Embedded tokens n: patches plus cls.
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  bool has_ca(std::size_t block) const;

  /// plain | vpt-shallow | vpt-deep | cvpt
  std::string variant_label() const;
  void set_variant_label(const std::string& label);

  void validate() const;
};

nlohmann::json to_json(const ViTConfig& c);
ViTConfig config_from_json(const nlohmann::json& j);

template <typename T>
struct Model {
  ViTConfig config;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

enum class CaInit { kShared, kRandom };

/// Fresh model with every tensor initialized from config.seed.
Model<float> build_model(const ViTConfig& config);

/// True for tensors that belong to the frozen backbone (not head, prompts, CA).
bool is_backbone_tensor(const std::string& name);

/// Trainable set implied by the variant: head for plain (linear probing),
/// prompts + head for VPT and CVPT.
FreezePolicy default_policy(const ViTConfig& config);

/// [H x W x C] image -> [patches x (p*p*C)] rows, patches row-major, each patch
/// flattened in (y, x, c) order.
template <typename T>
BasicTensor<T> extract_patches(const BasicTensor<T>& image, std::size_t patch);

/// Patch projection + bias, cls row prepended, positional embeddings added.
template <typename T>
Var<T> patch_embed(const BasicTensor<T>& image, std::size_t patch, const Var<T>& weight, const Var<T>& bias,
                   const Var<T>& cls, const Var<T>& pos);

/// Model parameters bound onto one graph, in store order.
template <typename T>
struct BoundModel {
  const Model<T>* model = nullptr;
  std::vector<Var<T>> vars;

  const Var<T>& operator[](std::string_view name) const { return vars[model->params.index_of(name)]; }
};

/// Binds every parameter as a leaf; only tensors the policy marks trainable
/// receive gradients. A null policy binds everything frozen.
template <typename T>
BoundModel<T> bind_model(Graph<T>& g, const Model<T>& model, const FreezePolicy* policy);

template <typename T>
EncoderBlockParams<T> block_params(const BoundModel<T>& bound, std::size_t block);

template <typename T>
struct ForwardOptions {
  AttentionProbe<T>* probe = nullptr;
  PromptDrop drop = PromptDrop::kAfterBlock;
};

/// Logits [1 x num_classes]; the head reads the cls row after the final norm.
template <typename T>
Var<T> model_forward(const BoundModel<T>& bound, const BasicTensor<T>& image, const ForwardOptions<T>& options = {});

/// Untaped convenience: logits as a [num_classes] tensor.
template <typename T>
BasicTensor<T> predict_logits(const Model<T>& model, const BasicTensor<T>& image, AttentionProbe<T>* probe = nullptr);

/// Builds `config`'s model and copies every backbone tensor from `ckpt`.
/// Prompts, head, and (for kRandom) cross-attention come fresh from
/// config.seed; with kShared each CA projection is copied from the same
/// block's self-attention projection.
Model<float> from_backbone(const Checkpoint& ckpt, const ViTConfig& config, CaInit ca_init);

/// from_backbone with shared CA initialization; config must be CVPT.
Model<float> load_checkpoint_with_weight_sharing(const Checkpoint& ckpt, const ViTConfig& config);

Checkpoint to_checkpoint(const Model<float>& model);
Model<float> model_from_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_model(const std::filesystem::path& path);

ParamCount count_params(const Model<float>& model, const FreezePolicy& policy);

}  // namespace cvpt
