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

#include "cvpt/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cvpt/error.hpp"
#include "cvpt/ops.hpp"
#include "cvpt/profile.hpp"
#include "cvpt/rng.hpp"

namespace cvpt {

bool ExperimentResult::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

namespace {

std::string echo_line(const ExperimentResult& r) {
  std::string s = "# " + r.name;
  for (const auto& [k, v] : r.config) s += " " + k + "=" + v;
  return s + "\n";
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

std::string list_string(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::size_t default_prompts(const LabSettings& s) { return s.base.prompts > 0 ? s.base.prompts : 8; }

ViTConfig arm_config(const LabSettings& s, const std::string& variant, std::size_t m) {
  ViTConfig c = s.base;
  c.seed = s.seed;
  c.prompts = variant == "plain" ? 0 : m;
  c.set_variant_label(variant);
  return c;
}

// Synthetic specs are rendered at the model's image geometry; files load as is.
LabeledSet lab_data(const LabSettings& s, const std::string& spec, std::uint64_t seed) {
  if (spec.rfind("synth:", 0) != 0) return load_set(spec);
  SynthSpec ss = parse_synth_spec(spec, seed);
  ss.image_size = s.base.image_size;
  ss.channels = s.base.channels;
  return synth_generate(ss);
}

}  // namespace

std::string ExperimentResult::csv() const {
  std::string s = echo_line(*this) + join(columns) + "\n";
  for (const auto& r : rows) s += join(r) + "\n";
  return s;
}

std::string ExperimentResult::verdicts_csv() const {
  std::string s = echo_line(*this) + "name,invariant,passed,detail\n";
  for (const auto& v : verdicts) s += v.name + "," + v.invariant + "," + (v.passed ? "pass" : "fail") + "," + v.detail + "\n";
  return s;
}

void ExperimentResult::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw DimensionError("experiment " + name + ": row width does not match columns");
  rows.push_back(std::move(row));
}

const Verdict* ExperimentResult::verdict(const std::string& want) const {
  for (const auto& v : verdicts) {
    if (v.name == want) return &v;
  }
  return nullptr;
}

void write_result(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + p.string() + " for writing");
    out << text;
    if (!out) throw Error("error while writing " + p.string());
  };
  write(dir / (r.name + ".csv"), r.csv());
  write(dir / (r.name + "_verdicts.csv"), r.verdicts_csv());
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

LabSettings::LabSettings() {
  train.steps = 200;
  train.batch_size = 32;
  train.lr = 1e-2;
  train.weight_decay = 1e-4;
  train.schedule = LrSchedule::kCosine;
}

std::vector<std::pair<std::string, std::string>> LabSettings::echo() const {
  return {{"seed", std::to_string(seed)},
          {"train_data", train_data},
          {"eval_data", eval_data},
          {"steps", std::to_string(train.steps)},
          {"batch", std::to_string(train.batch_size)},
          {"lr", fmt(train.lr, 6)},
          {"weight_decay", fmt(train.weight_decay, 6)},
          {"schedule", train.schedule == LrSchedule::kCosine ? "cosine" : "constant"},
          {"d", std::to_string(base.d)},
          {"depth", std::to_string(base.depth)},
          {"heads", std::to_string(base.heads)},
          {"ca_mode", to_string(base.ca_mode)},
          {"ca_heads", std::to_string(base.ca_heads)},
          {"backbone", backbone_path ? backbone_path->filename().string()
                                     : "pretrain:" + std::to_string(backbone.classes) + "x" +
                                           std::to_string(backbone.per_class) + "@" + fmt(backbone.difficulty, 2) +
                                           "#" + std::to_string(backbone.data_seed) + "/" +
                                           std::to_string(backbone.steps)}};
}

Model<float> pretrain_backbone(const ViTConfig& base, const BackboneSpec& spec, std::uint64_t seed) {
  ViTConfig c = base;
  c.variant = BlockVariant::kPlain;
  c.prompts = 0;
  c.ca_blocks.clear();
  c.num_classes = spec.classes;
  c.seed = seed;
  Model<float> m = build_model(c);
  const LabeledSet data = synth_generate({spec.classes, spec.per_class, spec.difficulty, spec.data_seed,
                                          base.image_size, base.channels});
  TrainConfig tc;
  tc.steps = spec.steps;
  tc.lr = spec.lr;
  tc.seed = seed;
  tc.policy = FreezePolicy::everything();
  train(m, data, tc);
  return m;
}

Model<float> obtain_backbone(const LabSettings& settings) {
  if (settings.backbone_path) {
    Model<float> m = load_model(*settings.backbone_path);
    if (m.config.variant != BlockVariant::kPlain) {
      throw ConfigError(settings.backbone_path->string() + " is not a plain backbone");
    }
    return m;
  }
  return pretrain_backbone(settings.base, settings.backbone, settings.seed);
}

ArmOutcome train_arm(const LabSettings& settings, const Model<float>& backbone, const ViTConfig& config,
                     CaInit init, const FreezePolicy& policy, const LabeledSet& train_set,
                     const LabeledSet& eval_set) {
  Checkpoint ckpt;
  ckpt.tensors = backbone.params;
  ArmOutcome out{0.0, 0.0, true, {}, from_backbone(ckpt, config, init)};
  out.params = count_params(out.model, policy);
  TrainConfig tc = settings.train;
  tc.policy = policy;
  tc.seed = settings.seed;
  try {
    TrainResult r = train(out.model, train_set, tc);
    out.final_loss = r.history.empty() ? 0.0 : r.history.back().loss;
    out.eval_acc = evaluate(out.model, eval_set);
  } catch (const NumericError&) {
    out.finite = false;
    out.final_loss = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

ExperimentResult run_dilution_experiment(const Model<float>& backbone, const std::vector<std::size_t>& prompt_counts,
                                         std::size_t layer, std::uint64_t seed) {
  if (prompt_counts.empty()) throw InputError("dilution: empty prompt-count list");
  ExperimentResult r;
  r.name = "dilution";
  r.config = {{"seed", std::to_string(seed)}, {"layer", std::to_string(layer)}, {"counts", list_string(prompt_counts)},
              {"d", std::to_string(backbone.config.d)}, {"depth", std::to_string(backbone.config.depth)},
              {"n", std::to_string(backbone.config.tokens())}};
  r.columns = {"mode", "prompt_count", "layer", "prompt_mass", "embedded_mass", "raw_prompt_mass", "mass_ee",
               "uniform_ee"};
  const ViTConfig& c = backbone.config;
  Rng rng = Rng(seed).split("dilution-input");
  const Tensor image = uniform_tensor<float>({c.image_size, c.image_size, c.channels}, 0.0, 1.0, rng);
  const double n = static_cast<double>(c.tokens());

  const auto natural = cls_attention_profile(backbone, image, layer, prompt_counts, {false, seed});
  const auto uniform = cls_attention_profile(backbone, image, layer, prompt_counts, {true, seed});

  auto emit = [&](const char* mode, const std::vector<ClsProfileRow>& rows) {
    for (const auto& p : rows) {
      const double expect = n / (n + static_cast<double>(p.prompt_count));
      r.add_row({mode, std::to_string(p.prompt_count), std::to_string(p.layer), fmt(p.prompt_mass, 9),
                 fmt(p.embedded_mass, 9), fmt(p.raw_prompt_mass, 9), fmt(p.mass_ee, 9), fmt(expect, 9)});
    }
  };
  emit("model", natural);
  emit("uniform", uniform);

  // Order rows by prompt count for the monotonicity checks.
  std::vector<std::size_t> order(prompt_counts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return prompt_counts[a] < prompt_counts[b]; });

  bool mono_prompt = true, mono_ee = true;
  std::string where;
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& lo = natural[order[k - 1]];
    const auto& hi = natural[order[k]];
    if (hi.prompt_mass < lo.prompt_mass) {
      mono_prompt = false;
      where += " prompt_mass m=" + std::to_string(lo.prompt_count) + "->" + std::to_string(hi.prompt_count);
    }
    if (hi.mass_ee > lo.mass_ee) {
      mono_ee = false;
      where += " mass_ee m=" + std::to_string(lo.prompt_count) + "->" + std::to_string(hi.prompt_count);
    }
  }
  r.verdicts.push_back({"prompt_mass_monotone", "cls prompt mass non-decreasing in m (model logits)", mono_prompt,
                        mono_prompt ? "ok" : where});
  r.verdicts.push_back({"embedded_mass_non_increasing", "mean embedded-query mass on embedded keys non-increasing in m",
                        mono_ee, mono_ee ? "ok" : where});

  double worst = 0.0;
  for (const auto& p : uniform) {
    const double m = static_cast<double>(p.prompt_count);
    worst = std::max(worst, std::abs(p.mass_ee - n / (n + m)));
    worst = std::max(worst, std::abs(p.raw_prompt_mass - m / (n + m)));
  }
  r.verdicts.push_back({"uniform_dilution_law", "uniform logits give embedded mass n/(n+m) within 1e-6",
                        worst <= 1e-6, "max deviation " + sci(worst)});
  for (std::size_t i = 0; i < prompt_counts.size(); ++i) {
    if (prompt_counts[i] != 0) continue;
    const bool zero = natural[i].prompt_mass == 0.0 && uniform[i].prompt_mass == 0.0;
    r.verdicts.push_back({"zero_prompts_zero_mass", "m = 0 gives prompt mass 0", zero, zero ? "ok" : "nonzero"});
    break;
  }
  return r;
}

ExperimentResult run_prompt_drop_equivalence(const ViTConfig& base, const std::vector<std::size_t>& prompt_counts,
                                             std::uint64_t seed, std::size_t inputs) {
  if (prompt_counts.empty()) throw InputError("prompt-drop: empty prompt-count list");
  ExperimentResult r;
  r.name = "prompt_drop";
  r.config = {{"seed", std::to_string(seed)}, {"counts", list_string(prompt_counts)},
              {"inputs", std::to_string(inputs)}, {"d", std::to_string(base.d)},
              {"depth", std::to_string(base.depth)}, {"heads", std::to_string(base.heads)}};
  r.columns = {"m", "input", "block", "diff_after_attention", "diff_before_attention"};
  double worst_equiv = 0.0;
  double weakest_control = std::numeric_limits<double>::infinity();
  for (std::size_t m : prompt_counts) {
    if (m == 0) throw InputError("prompt-drop: prompt counts must be >= 1");
    ViTConfig c = base;
    c.variant = BlockVariant::kVpt;
    c.vpt_mode = VptMode::kDeep;
    c.prompts = m;
    c.ca_blocks.clear();
    c.seed = seed;
    const Model<float> model = build_model(c);
    const Rng stream = Rng(seed).split("drop-inputs");
    for (std::size_t i = 0; i < inputs; ++i) {
      Rng ri = stream.split(static_cast<std::uint64_t>(i));
      const Tensor image = uniform_tensor<float>({c.image_size, c.image_size, c.channels}, 0.0, 1.0, ri);
      Graph<float> g;
      const BoundModel<float> bound = bind_model(g, model, nullptr);
      VptState<float> state{patch_embed(image, c.patch_size, bound["patch_embed.weight"], bound["patch_embed.bias"],
                                        bound["cls_token"], bound["pos_embed"]),
                            std::nullopt};
      double control = 0.0;
      for (std::size_t b = 0; b < c.depth; ++b) {
        const auto p = block_params(bound, b);
        const BlockContext<float> ctx{nullptr, b};
        const auto ref = vpt_block(state, p, VptMode::kDeep, b == 0, ctx, PromptDrop::kAfterBlock);
        const auto after = vpt_block(state, p, VptMode::kDeep, b == 0, ctx, PromptDrop::kAfterAttention);
        const auto before = vpt_block(state, p, VptMode::kDeep, b == 0, ctx, PromptDrop::kBeforeAttention);
        const double da = max_abs_diff(ref.tokens.value(), after.tokens.value());
        const double dz = max_abs_diff(ref.tokens.value(), before.tokens.value());
        worst_equiv = std::max(worst_equiv, da);
        control = std::max(control, dz);
        r.add_row({std::to_string(m), std::to_string(i), std::to_string(b), sci(da), sci(dz)});
        state = ref;
      }
      weakest_control = std::min(weakest_control, control);
    }
  }
  r.verdicts.push_back({"drop_after_attention_equivalent",
                        "embedded outputs identical within 1e-6 when prompts drop after attention", worst_equiv <= 1e-6,
                        "max diff " + sci(worst_equiv)});
  r.verdicts.push_back({"negative_control_detected", "dropping prompts before attention changes outputs (> 1e-6)",
                        weakest_control > 1e-6, "smallest per-input diff " + sci(weakest_control)});
  return r;
}

ExperimentResult run_position_ablation(const std::vector<int>& positions, const LabSettings& settings,
                                       const Model<float>& backbone) {
  if (positions.empty()) throw InputError("position ablation: empty position list");
  ExperimentResult r;
  r.name = "ablate_position";
  r.config = settings.echo();
  r.config.emplace_back("prompts", std::to_string(default_prompts(settings)));
  r.columns = {"position", "eval_acc", "final_loss", "finite"};
  const LabeledSet train_set = lab_data(settings, settings.train_data, settings.seed);
  const LabeledSet eval_set = lab_data(settings, settings.eval_data, settings.seed + 1);
  bool all_finite = true;
  for (int pos : positions) {
    ViTConfig c = arm_config(settings, "cvpt", default_prompts(settings));
    c.ca_position = pos;
    const ArmOutcome o = train_arm(settings, backbone, c, CaInit::kShared, FreezePolicy::prompts_and_head(), train_set,
                                   eval_set);
    all_finite = all_finite && o.finite;
    r.add_row({std::to_string(pos), fmt(o.eval_acc, 4), fmt(o.final_loss, 6), o.finite ? "1" : "0"});
  }
  r.verdicts.push_back({"all_positions_finite", "every position trains without non-finite values", all_finite,
                        all_finite ? "ok" : "non-finite run"});
  std::vector<int> got;
  for (const auto& row : r.rows) got.push_back(std::stoi(row[0]));
  std::vector<int> want = positions;
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  r.verdicts.push_back({"positions_complete", "position column is a permutation of the input", got == want, "ok"});
  return r;
}

std::string SharingArm::label() const {
  return std::string(init == CaInit::kShared ? "shared" : "random") + "+" + (learnable_ca ? "learnable" : "frozen");
}

SharingArm parse_sharing_arm(const std::string& text) {
  const auto plus = text.find('+');
  if (plus == std::string::npos) throw ConfigError("sharing arm '" + text + "' is not <init>+<ca>");
  const std::string init = text.substr(0, plus), ca = text.substr(plus + 1);
  SharingArm a;
  if (init == "shared") {
    a.init = CaInit::kShared;
  } else if (init == "random") {
    a.init = CaInit::kRandom;
  } else {
    throw ConfigError("sharing arm init must be shared or random, got '" + init + "'");
  }
  if (ca == "frozen") {
    a.learnable_ca = false;
  } else if (ca == "learnable") {
    a.learnable_ca = true;
  } else {
    throw ConfigError("sharing arm CA must be frozen or learnable, got '" + ca + "'");
  }
  return a;
}

std::vector<SharingArm> all_sharing_arms() {
  return {{CaInit::kShared, false}, {CaInit::kRandom, false}, {CaInit::kShared, true}, {CaInit::kRandom, true}};
}

ExperimentResult run_sharing_ablation(const std::vector<SharingArm>& arms, const LabSettings& settings,
                                      const Model<float>& backbone) {
  if (arms.empty()) throw InputError("sharing ablation: empty arm list");
  ExperimentResult r;
  r.name = "ablate_sharing";
  r.config = settings.echo();
  const std::size_t m = default_prompts(settings);
  r.config.emplace_back("prompts", std::to_string(m));
  r.columns = {"arm", "trainable_params", "total_params", "eval_acc", "final_loss"};
  const LabeledSet train_set = lab_data(settings, settings.train_data, settings.seed);
  const LabeledSet eval_set = lab_data(settings, settings.eval_data, settings.seed + 1);

  const ArmOutcome probe = train_arm(settings, backbone, arm_config(settings, "plain", 0), CaInit::kShared,
                                     FreezePolicy::linear_probe(), train_set, eval_set);
  r.add_row({"linear-probe", std::to_string(probe.params.trainable), std::to_string(probe.params.total),
             fmt(probe.eval_acc, 4), fmt(probe.final_loss, 6)});

  std::optional<double> shared_frozen, random_frozen;
  std::size_t max_frozen_params = 0, min_learnable_params = std::numeric_limits<std::size_t>::max();
  bool any_frozen = false, any_learnable = false;
  bool all_ge_probe = true, ca_intact = true, arithmetic = true;
  std::string below;
  for (const auto& arm : arms) {
    const ViTConfig c = arm_config(settings, "cvpt", m);
    const FreezePolicy policy = arm.learnable_ca ? FreezePolicy::learnable_ca() : FreezePolicy::prompts_and_head();
    Checkpoint ckpt;
    ckpt.tensors = backbone.params;
    const Model<float> initial = from_backbone(ckpt, c, arm.init);
    const ArmOutcome o = train_arm(settings, backbone, c, arm.init, policy, train_set, eval_set);
    r.add_row({arm.label(), std::to_string(o.params.trainable), std::to_string(o.params.total), fmt(o.eval_acc, 4),
               fmt(o.final_loss, 6)});
    if (o.eval_acc < probe.eval_acc) {
      all_ge_probe = false;
      below += " " + arm.label();
    }
    if (!arm.learnable_ca) {
      any_frozen = true;
      max_frozen_params = std::max(max_frozen_params, o.params.trainable);
      std::size_t ca_blocks = 0;
      for (std::size_t b = 0; b < c.depth; ++b) ca_blocks += c.has_ca(b) ? 1 : 0;
      const std::size_t expect = m * c.d * ca_blocks + c.d * c.num_classes + c.num_classes;
      arithmetic = arithmetic && o.params.trainable == expect;
      for (const auto& e : o.model.params.entries()) {
        if (glob_match("blocks.*.ca.*", e.name) && !bit_equal(e.value, initial.params.at(e.name))) ca_intact = false;
      }
      (arm.init == CaInit::kShared ? shared_frozen : random_frozen) = o.eval_acc;
    } else {
      any_learnable = true;
      min_learnable_params = std::min(min_learnable_params, o.params.trainable);
    }
  }
  if (shared_frozen && random_frozen) {
    r.verdicts.push_back({"shared_frozen_ge_random_frozen", "shared-init frozen CA accuracy >= random-init frozen CA",
                          *shared_frozen >= *random_frozen,
                          fmt(*shared_frozen, 4) + " vs " + fmt(*random_frozen, 4)});
  }
  r.verdicts.push_back({"all_arms_ge_probe", "every CVPT arm accuracy >= linear probing", all_ge_probe,
                        all_ge_probe ? "probe " + fmt(probe.eval_acc, 4) : "below probe:" + below});
  bool order = true;
  if (any_frozen) order = order && probe.params.trainable < max_frozen_params;
  if (any_frozen && any_learnable) order = order && max_frozen_params < min_learnable_params;
  if (!any_frozen && any_learnable) order = order && probe.params.trainable < min_learnable_params;
  r.verdicts.push_back({"trainable_param_ordering", "trainable params: probing < frozen-CA < learnable-CA", order,
                        "ok"});
  if (any_frozen) {
    r.verdicts.push_back({"frozen_ca_param_arithmetic", "frozen-CA trainable = prompts + head", arithmetic, "ok"});
    r.verdicts.push_back({"frozen_ca_unchanged", "frozen CA tensors bit-equal their loaded values after training",
                          ca_intact, "ok"});
  }
  return r;
}

ExperimentResult run_trend_experiment(const std::vector<std::size_t>& prompt_counts, const LabSettings& settings,
                                      const Model<float>& backbone, double cvpt_band_points) {
  if (prompt_counts.size() < 2) throw InputError("trend: need at least two prompt counts");
  ExperimentResult r;
  r.name = "trend";
  r.config = settings.echo();
  r.config.emplace_back("counts", list_string(prompt_counts));
  r.config.emplace_back("band_points", fmt(cvpt_band_points, 2));
  r.columns = {"variant", "m", "trainable_params", "eval_acc", "final_loss"};
  const LabeledSet train_set = lab_data(settings, settings.train_data, settings.seed);
  const LabeledSet eval_set = lab_data(settings, settings.eval_data, settings.seed + 1);

  std::vector<double> vpt, cvpt;
  for (const std::string variant : {"vpt-deep", "cvpt"}) {
    for (std::size_t m : prompt_counts) {
      const ViTConfig c = arm_config(settings, variant, m);
      const ArmOutcome o = train_arm(settings, backbone, c, CaInit::kShared, FreezePolicy::prompts_and_head(),
                                     train_set, eval_set);
      (variant == "cvpt" ? cvpt : vpt).push_back(o.eval_acc);
      r.add_row({variant, std::to_string(m), std::to_string(o.params.trainable), fmt(o.eval_acc, 4),
                 fmt(o.final_loss, 6)});
    }
  }
  const auto [lo, hi] = std::minmax_element(cvpt.begin(), cvpt.end());
  const double spread = (*hi - *lo) * 100.0;
  r.verdicts.push_back({"cvpt_spread_within_band", "CVPT accuracy spread across counts <= band (points)",
                        spread <= cvpt_band_points + 1e-9, "spread " + fmt(spread, 2)});

  std::size_t largest = 0;
  for (std::size_t i = 1; i < prompt_counts.size(); ++i) {
    if (prompt_counts[i] > prompt_counts[largest]) largest = i;
  }
  double peak = -1.0;
  for (std::size_t i = 0; i < vpt.size(); ++i) {
    if (i != largest) peak = std::max(peak, vpt[i]);
  }
  r.verdicts.push_back({"vpt_largest_below_peak", "VPT accuracy at the largest count < its smaller-count peak",
                        vpt[largest] < peak, fmt(vpt[largest], 4) + " vs peak " + fmt(peak, 4)});
  return r;
}

}  // namespace cvpt

namespace cvpt {

std::vector<CostShape> counter_check_grid(const CostShape& base) {
  std::vector<CostShape> grid;
  const std::vector<std::size_t> ns = {1, 5, base.n};
  const std::vector<std::size_t> ms = {1, 3, 8};
  const std::vector<std::size_t> ds = {8, 16};
  for (const std::string variant : {"plain", "vpt-deep", "vpt-shallow", "cvpt"}) {
    for (std::size_t n : ns) {
      for (std::size_t d : ds) {
        for (std::size_t m : ms) {
          CostShape s = base;
          s.variant = variant;
          s.n = n;
          s.d = d;
          s.m = variant == "plain" ? 0 : m;
          s.heads = (n + m) % 2 == 0 ? 2 : 1;
          s.ca_heads = m == 8 ? 2 : 1;
          s.ca_mode = m == 3 ? CaMode::kFull : CaMode::kLiteral;
          grid.push_back(s);
          if (variant == "plain") break;
        }
      }
    }
  }
  return grid;
}

ExperimentResult run_cost_experiment(const CostShape& base, const std::vector<std::size_t>& prompt_counts,
                                     std::uint64_t seed) {
  ExperimentResult r;
  r.name = "cost_sweep";
  r.config = {{"n", std::to_string(base.n)},         {"d", std::to_string(base.d)},
              {"depth", std::to_string(base.depth)}, {"heads", std::to_string(base.heads)},
              {"ca_mode", to_string(base.ca_mode)},  {"counts", list_string(prompt_counts)}};
  r.columns = {"variant", "n", "m", "d", "depth", "attn_flops", "block_flops", "total_flops", "trainable_params",
               "act_mem_bytes"};
  const SweepResult s = sweep(base, prompt_counts);
  for (const auto& row : s.rows) {
    r.add_row({row.shape.variant, std::to_string(row.shape.n), std::to_string(row.shape.m),
               std::to_string(row.shape.d), std::to_string(row.shape.depth), std::to_string(row.attn_flops),
               std::to_string(row.block_flops), std::to_string(row.total_flops), std::to_string(row.trainable_params),
               std::to_string(row.act_mem_bytes)});
  }
  r.verdicts.push_back({"vpt_scores_quadratic_exact", "VPT score FLOPs fit degree 2 in m with zero residual",
                        s.vpt_score_exact, "r2 " + fmt(s.vpt_score_fit.r2, 12)});
  r.verdicts.push_back({"cvpt_block_linear_exact", "CVPT block FLOPs fit degree 1 in m with zero residual",
                        s.cvpt_block_exact, "r2 " + fmt(s.cvpt_block_fit.r2, 12)});
  r.verdicts.push_back({"gap_widens", "VPT - CVPT total FLOP gap strictly increases with m", s.gap_widens, "ok"});

  std::size_t mismatches = 0, checked = 0;
  std::string first;
  for (const auto& g : counter_check_grid(base)) {
    const MeasuredBlock mb = measure_block(g, seed + checked);
    const std::uint64_t sa = mb.flops.in(Region::kSelfAttention);
    const std::uint64_t ca = mb.flops.in(Region::kCrossAttention);
    const std::uint64_t mlp = mb.flops.in(Region::kMlp);
    const CostReport rep = cost_report(g);
    const bool ok = sa + ca == rep.attn_flops && sa + ca + mlp == rep.block_flops &&
                    mb.flops.total_matmul() == rep.block_flops &&
                    mb.activation_bytes == activation_elements_block(g, 0) * sizeof(float);
    ++checked;
    if (!ok) {
      ++mismatches;
      if (first.empty()) {
        first = g.variant + " n=" + std::to_string(g.n) + " m=" + std::to_string(g.m) + " d=" + std::to_string(g.d);
      }
    }
  }
  r.verdicts.push_back({"analytic_matches_counter",
                        "analytic FLOPs and activation bytes equal the instrumented block counters",
                        mismatches == 0 && checked >= 20,
                        std::to_string(checked) + " configs, " + std::to_string(mismatches) + " mismatches" +
                            (first.empty() ? "" : " first " + first)});
  return r;
}

GradCheckReport model_grad_check(const Model<float>& model, const FreezePolicy& policy, const Tensor& image,
                                 std::size_t label, const GradCheckOptions& options) {
  const Model<double> md = model.cast<double>();
  const Tensor64 img = image.cast<double>();
  std::vector<NamedParam<double>> params;
  for (const auto& e : md.params.entries()) params.push_back({e.name, e.value, policy.trainable(e.name)});
  LossFn<double> f = [&md, &img, label](Graph<double>&, std::span<const Var<double>> vars) {
    BoundModel<double> bound;
    bound.model = &md;
    bound.vars.assign(vars.begin(), vars.end());
    return cross_entropy(model_forward(bound, img), label);
  };
  return grad_check(f, params, options);
}

}  // namespace cvpt
