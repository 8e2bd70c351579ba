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
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvpt/costmodel.hpp"
#include "cvpt/datasets.hpp"
#include "cvpt/gradcheck.hpp"
#include "cvpt/model.hpp"
#include "cvpt/train.hpp"

namespace cvpt {

struct Verdict {
  std::string name;
  std::string invariant;  ///< the property or trend being checked
  bool passed = false;
  std::string detail;
};

struct ExperimentResult {
  std::string name;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<Verdict> verdicts;

  bool passed() const;
  /// Metric table. First line: "# <name> key=value ..." config echo.
  std::string csv() const;
  /// One line per verdict: name,invariant,passed,detail (same echo line first).
  std::string verdicts_csv() const;
  void add_row(std::vector<std::string> row);
  const Verdict* verdict(const std::string& name) const;
};

/// Writes <dir>/<name>.csv and <dir>/<name>_verdicts.csv.
void write_result(const ExperimentResult& r, const std::filesystem::path& dir);

/// Fixed-point formatting used in every CSV cell so reruns compare byte-wise.
std::string fmt(double v, int digits = 6);

/// "Pretrained" backbone: a plain model trained end to end on a broader,
/// easier synthetic task before being frozen.
struct BackboneSpec {
  std::size_t classes = 20;
  std::size_t per_class = 40;
  double difficulty = 0.5;
  std::uint64_t data_seed = 100;
  std::size_t steps = 400;
  double lr = 1e-3;
};

/// Shared setup for the training experiments.
struct LabSettings {
  ViTConfig base;  ///< geometry (image, patch, d, depth, heads, classes) and CA options
  std::uint64_t seed = 0;
  std::string train_data = "synth:10x40@2#1";
  std::string eval_data = "synth:10x30@2#2";
  TrainConfig train;  ///< steps, batch, lr, wd, schedule; policy is set per arm
  BackboneSpec backbone;
  /// Load the backbone from here when set; otherwise pretrain it.
  std::optional<std::filesystem::path> backbone_path;

  LabSettings();
  std::vector<std::pair<std::string, std::string>> echo() const;
};

Model<float> pretrain_backbone(const ViTConfig& base, const BackboneSpec& spec, std::uint64_t seed);
/// Loads settings.backbone_path or pretrains. The result is a plain model.
Model<float> obtain_backbone(const LabSettings& settings);

/// Cls-row prompt mass across prompt counts on `backbone`, with the model's
/// own logits and with logits forced uniform.
ExperimentResult run_dilution_experiment(const Model<float>& backbone, const std::vector<std::size_t>& prompt_counts,
                                         std::size_t layer, std::uint64_t seed);

/// Per block, compares VPT-deep outputs for drop-after-attention and
/// drop-before-attention against drop-after-block on `inputs` random images.
ExperimentResult run_prompt_drop_equivalence(const ViTConfig& base, const std::vector<std::size_t>& prompt_counts,
                                             std::uint64_t seed, std::size_t inputs = 10);

ExperimentResult run_position_ablation(const std::vector<int>& positions, const LabSettings& settings,
                                       const Model<float>& backbone);

struct SharingArm {
  CaInit init = CaInit::kShared;
  bool learnable_ca = false;
  std::string label() const;
};
SharingArm parse_sharing_arm(const std::string& text);  ///< "<shared|random>+<frozen|learnable>"
std::vector<SharingArm> all_sharing_arms();

ExperimentResult run_sharing_ablation(const std::vector<SharingArm>& arms, const LabSettings& settings,
                                      const Model<float>& backbone);

ExperimentResult run_trend_experiment(const std::vector<std::size_t>& prompt_counts, const LabSettings& settings,
                                      const Model<float>& backbone, double cvpt_band_points = 3.0);

/// Analytic cost sweep over prompt counts plus an exactness check of the
/// analytic FLOP formulas against the instrumented counter on a grid of
/// (variant, n, m, d, heads) block configurations around `base`.
ExperimentResult run_cost_experiment(const CostShape& base, const std::vector<std::size_t>& prompt_counts,
                                     std::uint64_t seed);

/// Grid used by run_cost_experiment's counter check (at least 20 entries).
std::vector<CostShape> counter_check_grid(const CostShape& base);

/// Gradient check of cross-entropy on one image through the whole model, in
/// double precision, for the tensors `policy` marks trainable.
GradCheckReport model_grad_check(const Model<float>& model, const FreezePolicy& policy, const Tensor& image,
                                 std::size_t label, const GradCheckOptions& options);

/// Trains one downstream arm from the backbone and reports eval accuracy.
struct ArmOutcome {
  double eval_acc = 0.0;
  double final_loss = 0.0;
  bool finite = true;
  ParamCount params;
  Model<float> model;
};
ArmOutcome train_arm(const LabSettings& settings, const Model<float>& backbone, const ViTConfig& config,
                     CaInit init, const FreezePolicy& policy, const LabeledSet& train_set, const LabeledSet& eval_set);

}  // namespace cvpt
