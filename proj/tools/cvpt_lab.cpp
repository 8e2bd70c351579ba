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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cvpt/error.hpp"
#include "cvpt/experiments.hpp"
#include "cvpt/rng.hpp"

namespace {

using namespace cvpt;

struct Shared {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string data;
  std::string variant = "cvpt";
  std::size_t prompts = 8;
  std::string ca_mode = "literal";
  int ca_position = 3;
  std::size_t ca_heads = 1;
  std::string backbone;
  std::size_t steps = LabSettings().train.steps;
  double lr = LabSettings().train.lr;
  std::size_t batch = 32;
};

ViTConfig model_config(const Shared& s) {
  ViTConfig c;
  c.set_variant_label(s.variant);
  c.prompts = c.variant == BlockVariant::kPlain ? 0 : s.prompts;
  c.ca_mode = parse_ca_mode(s.ca_mode);
  c.ca_position = s.ca_position;
  c.ca_heads = s.ca_heads;
  c.seed = s.seed;
  c.validate();
  return c;
}

LabSettings lab_settings(const Shared& s) {
  LabSettings l;
  l.base = model_config(s);
  l.seed = s.seed;
  if (!s.data.empty()) l.train_data = s.data;
  l.train.steps = s.steps;
  l.train.lr = s.lr;
  l.train.batch_size = s.batch;
  if (!s.backbone.empty()) l.backbone_path = s.backbone;
  return l;
}

FreezePolicy parse_policy(const std::string& name, const ViTConfig& c) {
  if (name.empty() || name == "default") return default_policy(c);
  if (name == "linear-probe") return FreezePolicy::linear_probe();
  if (name == "prompts-head") return FreezePolicy::prompts_and_head();
  if (name == "learnable-ca") return FreezePolicy::learnable_ca();
  if (name == "everything") return FreezePolicy::everything();
  throw ConfigError("unknown policy '" + name + "' (default, linear-probe, prompts-head, learnable-ca, everything)");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("error while writing " + path.string());
}

bool report(const ExperimentResult& r, const Shared& s) {
  write_result(r, s.out);
  for (const auto& v : r.verdicts) {
    std::printf("[%s] %s: %s (%s)\n", v.passed ? "PASS" : "FAIL", v.name.c_str(), v.invariant.c_str(),
                v.detail.c_str());
  }
  std::printf("wrote %s/%s.csv\n", s.out.c_str(), r.name.c_str());
  return r.passed();
}

Model<float> downstream_model(const Shared& s, const ViTConfig& c, const std::string& ca_init) {
  if (s.backbone.empty()) return build_model(c);
  Checkpoint ckpt = load_checkpoint_file(s.backbone);
  return from_backbone(ckpt, c, ca_init == "random" ? CaInit::kRandom : CaInit::kShared);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy ViT lab for prompt tuning with cross-attention prompts and VPT baselines"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "key=value configuration file; command-line flags override it");

  Shared s;
  app.add_option("--seed", s.seed, "Seed for initialization, data order and inputs");
  app.add_option("--out", s.out, "Output directory for CSV files");
  app.add_option("--data", s.data, "Dataset path or synth:<classes>x<per_class>@<difficulty>#<seed>");
  app.add_option("--variant", s.variant, "plain | vpt-shallow | vpt-deep | cvpt")
      ->check(CLI::IsMember({"plain", "vpt-shallow", "vpt-deep", "cvpt"}));
  app.add_option("--prompts", s.prompts, "Prompt count m");
  app.add_option("--ca-mode", s.ca_mode, "literal | full")->check(CLI::IsMember({"literal", "full"}));
  app.add_option("--ca-position", s.ca_position, "Cross-attention position 1..5")->check(CLI::Range(1, 5));
  app.add_option("--ca-heads", s.ca_heads, "Cross-attention head count");
  app.add_option("--backbone", s.backbone, "Plain backbone checkpoint (otherwise pretrained on the fly)");
  app.add_option("--steps", s.steps, "Training steps per run");
  app.add_option("--lr", s.lr, "Peak learning rate");
  app.add_option("--batch", s.batch, "Batch size");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes history.csv and model.ckpt");
  std::string eval_data, policy_name, ca_init = "shared", save_path;
  train_cmd->add_option("--eval-data", eval_data, "Held-out data evaluated at every history row");
  train_cmd->add_option("--policy", policy_name, "default | linear-probe | prompts-head | learnable-ca | everything");
  train_cmd->add_option("--ca-init", ca_init, "shared | random (with --backbone)")
      ->check(CLI::IsMember({"shared", "random"}));
  train_cmd->add_option("--save", save_path, "Checkpoint path (default <out>/model.ckpt)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a saved model");
  std::string model_path;
  eval_cmd->add_option("--model", model_path, "Model checkpoint")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Central-difference check of the model gradients");
  std::size_t coords = 0;
  double tolerance = 1e-4, step = 1e-3;
  std::string grad_policy;
  grad_cmd->add_option("--policy", grad_policy, "Tensors to check (same names as train --policy)");
  grad_cmd->add_option("--coords", coords, "Coordinates per tensor (0 = all)");
  grad_cmd->add_option("--tolerance", tolerance, "Relative error tolerance");
  grad_cmd->add_option("--step", step, "Finite-difference step in [1e-4, 1e-2]");

  // analyze-attention
  auto* attn_cmd = app.add_subcommand("analyze-attention", "Cls attention mass across prompt counts");
  std::vector<std::size_t> attn_counts = {0, 1, 5, 20, 50, 100, 196};
  std::size_t layer = 0;
  bool random_backbone = false;
  attn_cmd->add_option("--counts", attn_counts, "Prompt counts")->delimiter(',');
  attn_cmd->add_option("--layer", layer, "Block index");
  attn_cmd->add_flag("--random", random_backbone, "Use a randomly initialized backbone instead of a pretrained one");

  // prompt-drop
  auto* drop_cmd = app.add_subcommand("prompt-drop", "Prompt removal after attention vs after the block");
  std::vector<std::size_t> drop_counts = {1, 8, 64};
  std::size_t inputs = 10;
  drop_cmd->add_option("--counts", drop_counts, "Prompt counts")->delimiter(',');
  drop_cmd->add_option("--inputs", inputs, "Random inputs per count");

  // cost-sweep
  auto* cost_cmd = app.add_subcommand("cost-sweep", "Analytic FLOP/parameter/memory sweep");
  std::vector<std::size_t> cost_counts = {1, 10, 20, 50, 100, 150, 200};
  std::size_t cost_n = 0, cost_d = 0, cost_depth = 0, cost_heads = 0;
  cost_cmd->add_option("--counts", cost_counts, "Prompt counts")->delimiter(',');
  cost_cmd->add_option("--n", cost_n, "Embedded tokens (default from the image geometry)");
  cost_cmd->add_option("--d", cost_d, "Embedding width");
  cost_cmd->add_option("--depth", cost_depth, "Block count");
  cost_cmd->add_option("--heads", cost_heads, "Self-attention heads");

  // ablate-position
  auto* pos_cmd = app.add_subcommand("ablate-position", "Train one CVPT model per cross-attention position");
  std::vector<int> positions = {1, 2, 3, 4, 5};
  pos_cmd->add_option("--positions", positions, "Positions")->delimiter(',')->check(CLI::Range(1, 5));

  // ablate-sharing
  auto* share_cmd = app.add_subcommand("ablate-sharing", "Weight sharing vs random CA init, frozen vs learnable");
  std::vector<std::string> arm_names = {"shared+frozen", "random+frozen", "shared+learnable", "random+learnable"};
  share_cmd->add_option("--arms", arm_names, "Arms <shared|random>+<frozen|learnable>")->delimiter(',');

  // trend
  auto* trend_cmd = app.add_subcommand("trend", "VPT and CVPT accuracy across prompt counts");
  std::vector<std::size_t> trend_counts = {4, 16, 64};
  double band = 3.0;
  trend_cmd->add_option("--counts", trend_counts, "Prompt counts")->delimiter(',');
  trend_cmd->add_option("--band", band, "Allowed CVPT accuracy spread in points");

  CLI11_PARSE(app, argc, argv);

  try {
    bool ok = true;
    if (*train_cmd) {
      const ViTConfig c = model_config(s);
      Model<float> model = downstream_model(s, c, ca_init);
      const LabeledSet data = load_data(s.data.empty() ? LabSettings().train_data : s.data, s.seed);
      std::optional<LabeledSet> eval_set;
      if (!eval_data.empty()) eval_set = load_data(eval_data, s.seed + 1);
      TrainConfig tc;
      tc.steps = s.steps;
      tc.lr = s.lr;
      tc.batch_size = s.batch;
      tc.seed = s.seed;
      tc.policy = parse_policy(policy_name, c);
      const TrainResult r = train(model, data, tc, eval_set ? &*eval_set : nullptr);
      const std::string echo = "# train variant=" + c.variant_label() + " prompts=" + std::to_string(c.prompts) +
                               " seed=" + std::to_string(s.seed) + " steps=" + std::to_string(s.steps) +
                               " lr=" + fmt(s.lr) + " batch=" + std::to_string(s.batch) +
                               " policy=" + tc.policy.describe() + "\n";
      write_text(std::filesystem::path(s.out) / "history.csv", echo + history_csv(r.history));
      const std::filesystem::path ckpt = save_path.empty() ? std::filesystem::path(s.out) / "model.ckpt"
                                                                     : std::filesystem::path(save_path);
      save_checkpoint(model, ckpt);
      const auto pc = count_params(model, tc.policy);
      std::printf("trained %s: final loss %.6f, train acc %.4f, trainable %zu of %zu; wrote %s\n",
                  c.variant_label().c_str(), r.history.back().loss, r.history.back().train_acc, pc.trainable,
                  pc.total, ckpt.string().c_str());
    } else if (*eval_cmd) {
      const Model<float> model = load_model(model_path);
      const LabeledSet data = load_data(s.data.empty() ? LabSettings().eval_data : s.data, s.seed);
      const double acc = evaluate(model, data);
      write_text(std::filesystem::path(s.out) / "eval.csv",
                 "# eval model=" + std::filesystem::path(model_path).filename().string() + " data=" + s.data +
                     "\nsamples,accuracy\n" + std::to_string(data.size()) + "," + fmt(acc, 4) + "\n");
      std::printf("accuracy %.4f on %zu samples\n", acc, data.size());
    } else if (*grad_cmd) {
      const ViTConfig c = model_config(s);
      const Model<float> model = build_model(c);
      Rng rng = Rng(s.seed).split("gradcheck-input");
      const Tensor image = uniform_tensor<float>({c.image_size, c.image_size, c.channels}, 0.0, 1.0, rng);
      GradCheckOptions opt;
      opt.max_coords = coords;
      opt.tolerance = tolerance;
      opt.step = step;
      opt.seed = s.seed;
      const GradCheckReport rep =
          model_grad_check(model, parse_policy(grad_policy, c), image, s.seed % c.num_classes, opt);
      std::string csv = "# gradcheck variant=" + c.variant_label() + " prompts=" + std::to_string(c.prompts) +
                        " seed=" + std::to_string(s.seed) + " coords=" + std::to_string(coords) + "\n" +
                        "tensor,frozen,checked,max_rel_err,max_abs_err,passed\n";
      char buf[256];
      for (const auto& e : rep.entries) {
        std::snprintf(buf, sizeof buf, "%s,%d,%zu,%.3e,%.3e,%s\n", e.name.c_str(), e.frozen ? 1 : 0, e.checked,
                      e.max_rel_err, e.max_abs_err, e.passed ? "pass" : "fail");
        csv += buf;
      }
      write_text(std::filesystem::path(s.out) / "gradcheck.csv", csv);
      std::printf("%s\n", rep.summary().c_str());
      ok = rep.passed;
    } else if (*attn_cmd) {
      Model<float> backbone;
      if (random_backbone) {
        ViTConfig c = model_config(s);
        c.variant = BlockVariant::kPlain;
        c.prompts = 0;
        backbone = build_model(c);
      } else {
        backbone = obtain_backbone(lab_settings(s));
      }
      ok = report(run_dilution_experiment(backbone, attn_counts, layer, s.seed), s);
    } else if (*drop_cmd) {
      ok = report(run_prompt_drop_equivalence(model_config(s), drop_counts, s.seed, inputs), s);
    } else if (*cost_cmd) {
      CostShape base = CostShape::from_config(model_config(s));
      if (cost_n) base.n = cost_n;
      if (cost_d) base.d = cost_d;
      if (cost_depth) base.depth = cost_depth;
      if (cost_heads) base.heads = cost_heads;
      ok = report(run_cost_experiment(base, cost_counts, s.seed), s);
    } else if (*pos_cmd) {
      const LabSettings l = lab_settings(s);
      ok = report(run_position_ablation(positions, l, obtain_backbone(l)), s);
    } else if (*share_cmd) {
      std::vector<SharingArm> arms;
      for (const auto& a : arm_names) arms.push_back(parse_sharing_arm(a));
      const LabSettings l = lab_settings(s);
      ok = report(run_sharing_ablation(arms, l, obtain_backbone(l)), s);
    } else if (*trend_cmd) {
      const LabSettings l = lab_settings(s);
      ok = report(run_trend_experiment(trend_counts, l, obtain_backbone(l), band), s);
    }
    return ok ? 0 : 1;
  } catch (const cvpt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
