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

// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here and nowhere else.
//
//   acceptance <path-to-cvpt_lab> [--only 1,2,...]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "cvpt/checkpoint.hpp"
#include "cvpt/error.hpp"
#include "cvpt/experiments.hpp"
#include "cvpt/model.hpp"
#include "cvpt/profile.hpp"
#include "cvpt/rng.hpp"
#include "cvpt/train.hpp"

using namespace cvpt;
namespace fs = std::filesystem;

namespace {

constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kGradCoords = 96;  // sampled coordinates per checked tensor
constexpr double kPreserveTol = 1e-5;
constexpr std::size_t kPreserveInputs = 100;
constexpr std::size_t kFrozenSteps = 200;
constexpr double kAblationSeconds = 15.0 * 60.0;
constexpr double kBandPoints = 3.0;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Collects the failing verdicts of an experiment, or "" if all passed.
std::string failed_verdicts(const ExperimentResult& r, const std::vector<std::string>& only = {}) {
  std::string out;
  for (const auto& v : r.verdicts) {
    if (!only.empty() && std::find(only.begin(), only.end(), v.name) == only.end()) continue;
    if (!v.passed) out += " " + v.name + " (" + v.detail + ")";
  }
  return out;
}

const Verdict& need_verdict(const ExperimentResult& r, const std::string& name) {
  const Verdict* v = r.verdict(name);
  if (!v) throw cvpt::Error(r.name + " produced no verdict " + name);
  return *v;
}

Tensor random_image(const ViTConfig& c, std::uint64_t seed) {
  Rng r = Rng(seed).split("acceptance-input");
  return uniform_tensor<float>({c.image_size, c.image_size, c.channels}, 0.0, 1.0, r);
}

ViTConfig cvpt_config(std::size_t m, ViTConfig c = {}) {
  c.variant = BlockVariant::kCvpt;
  c.prompts = m;
  return c;
}

Checkpoint as_checkpoint(const Model<float>& m) { return to_checkpoint(m); }

// 1. Gradients of prompts, head and (learnable arm) CA projections.
Outcome gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  ViTConfig plain;
  const Checkpoint bb = as_checkpoint(build_model(plain));
  const Model<float> m = load_checkpoint_with_weight_sharing(bb, cvpt_config(8));
  if (m.config.tokens() != 17 || m.config.d != 64 || m.config.depth != 4) {
    return {false, "toy geometry changed"};
  }
  GradCheckOptions opt;
  opt.tolerance = kGradRelTol;
  opt.max_coords = kGradCoords;
  opt.step = 1e-4;
  std::string detail;
  bool ok = true;
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& [label, policy] : std::vector<std::pair<std::string, FreezePolicy>>{
           {"frozen-CA", FreezePolicy::prompts_and_head()}, {"learnable-CA", FreezePolicy::learnable_ca()}}) {
    opt.seed = checked + 1;
    const GradCheckReport r = model_grad_check(m, policy, random_image(m.config, 1), 3, opt);
    bool saw_ca = false, saw_prompts = false, saw_head = false;
    for (const auto& e : r.entries) {
      if (e.frozen) continue;
      checked += e.checked;
      worst = std::max(worst, e.max_rel_err);
      saw_ca = saw_ca || e.name.find(".ca.") != std::string::npos;
      saw_prompts = saw_prompts || e.name.ends_with("prompts");
      saw_head = saw_head || e.name.starts_with("head.");
      if (!e.passed) detail += " " + label + ":" + e.name + "=" + num(e.max_rel_err);
    }
    ok = ok && r.passed && saw_prompts && saw_head && (saw_ca == (label == "learnable-CA"));
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kGradSeconds;
  return {ok, std::to_string(checked) + " coordinates, max rel err " + num(worst) + " (tol " + num(kGradRelTol) +
                  "), " + num(secs) + " s (limit " + num(kGradSeconds) + ")" + detail};
}

// 2. Zero prompts reproduce the backbone; SA scores are untouched.
Outcome backbone_preservation(const Model<float>& backbone) {
  const Checkpoint bb = as_checkpoint(backbone);
  // the head is fresh after loading; reuse the backbone's so logits are comparable
  Model<float> cv = load_checkpoint_with_weight_sharing(bb, cvpt_config(8, backbone.config));
  for (auto& e : cv.params.entries()) {
    if (e.name.ends_with("prompts")) e.value = Tensor(e.value.shape());
    if (e.name.starts_with("head.")) e.value = backbone.params.at(e.name);
  }
  double worst = 0.0;
  bool scores_equal = true;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < kPreserveInputs; ++i) {
    const Tensor img = random_image(backbone.config, 100 + i);
    AttentionProbe<float> pa, pb;
    const Tensor a = predict_logits(cv, img, &pa);
    const Tensor b = predict_logits(backbone, img, &pb);
    worst = std::max(worst, max_abs_diff(a, b));
    std::vector<const AttentionRecord<float>*> sa;
    for (const auto& rec : pa.records) {
      if (rec.kind == AttentionKind::kSelf) sa.push_back(&rec);
    }
    if (sa.size() != pb.records.size()) {
      scores_equal = false;
      continue;
    }
    for (std::size_t k = 0; k < sa.size(); ++k) {
      scores_equal = scores_equal && bit_equal(sa[k]->logits, pb.records[k].logits);
      ++compared;
    }
  }
  // With non-zero prompts the first block's SA still sees the unmodified input.
  const Model<float> live = load_checkpoint_with_weight_sharing(bb, cvpt_config(8, backbone.config));
  AttentionProbe<float> pa, pb;
  predict_logits(live, random_image(backbone.config, 7), &pa);
  predict_logits(backbone, random_image(backbone.config, 7), &pb);
  bool first_block = pb.records.size() > 0;
  for (const auto& rec : pb.records) {
    if (rec.layer != 0) continue;
    bool found = false;
    for (const auto& other : pa.records) {
      if (other.kind == AttentionKind::kSelf && other.layer == 0 && other.head == rec.head) {
        found = bit_equal(other.logits, rec.logits);
      }
    }
    first_block = first_block && found;
  }
  const bool ok = worst <= kPreserveTol && scores_equal && first_block && compared > 0;
  return {ok, "max |logit diff| " + num(worst) + " over " + std::to_string(kPreserveInputs) + " inputs (tol " +
                  num(kPreserveTol) + "); " + std::to_string(compared) + " SA score matrices " +
                  (scores_equal ? "bit-identical" : "DIFFER") + "; block-0 scores with live prompts " +
                  (first_block ? "bit-identical" : "DIFFER")};
}

// 3. Dropping VPT prompts after SA equals dropping after the block.
Outcome prompt_drop() {
  const ExperimentResult r = run_prompt_drop_equivalence(ViTConfig{}, {1, 8, 64}, 0, 10);
  const Verdict& eq = need_verdict(r, "drop_after_attention_equivalent");
  const Verdict& neg = need_verdict(r, "negative_control_detected");
  return {eq.passed && neg.passed, "m=1,8,64: " + eq.detail + "; control: " + neg.detail};
}

// 4. Uniform-logit dilution law and monotone prompt mass.
Outcome dilution(const Model<float>& backbone) {
  const ExperimentResult r = run_dilution_experiment(backbone, {1, 5, 20, 50, 100, 196}, 0, 0);
  const Verdict& law = need_verdict(r, "uniform_dilution_law");
  const Verdict& mono = need_verdict(r, "prompt_mass_monotone");
  return {law.passed && mono.passed, "law: " + law.detail + "; monotone (trained backbone, layer 0): " + mono.detail};
}

// 5. Cost model exactness, fits and the widening gap.
Outcome cost_model() {
  ViTConfig c = cvpt_config(8);
  const CostShape base = CostShape::from_config(c);
  const ExperimentResult r = run_cost_experiment(base, {1, 10, 20, 50, 100, 150, 200}, 0);
  const std::size_t grid = counter_check_grid(base).size();
  const std::string bad = failed_verdicts(r);
  std::string detail = std::to_string(grid) + "-point counter grid";
  for (const char* v : {"analytic_matches_counter", "vpt_scores_quadratic_exact", "cvpt_block_linear_exact",
                        "gap_widens"}) {
    detail += "; " + std::string(v) + " " + (need_verdict(r, v).passed ? "ok" : "FAIL");
  }
  return {bad.empty() && grid >= 20, detail + bad};
}

// 6. Weight sharing, frozen tensors after training, trainable-count ordering.
Outcome weight_sharing(const Model<float>& backbone, const LabSettings& settings) {
  const Checkpoint bb = as_checkpoint(backbone);
  ViTConfig c = cvpt_config(8);
  c.ca_mode = CaMode::kFull;
  const Model<float> full = load_checkpoint_with_weight_sharing(bb, c);
  std::size_t shared = 0;
  bool copies = true;
  for (std::size_t b = 0; b < c.depth; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    for (const char* w : {"w_q", "w_k", "w_v", "w_o"}) {
      copies = copies && bit_equal(full.params.at(p + "ca." + w), full.params.at(p + "sa." + w));
      ++shared;
    }
  }

  Model<float> m = load_checkpoint_with_weight_sharing(bb, cvpt_config(8));
  const Model<float> initial = m;
  TrainConfig tc = settings.train;
  tc.steps = kFrozenSteps;
  tc.policy = FreezePolicy::prompts_and_head();
  const LabeledSet data = load_data(settings.train_data, settings.seed);
  train(m, data, tc);
  std::size_t frozen = 0, changed = 0, moved = 0;
  for (const auto& e : m.params.entries()) {
    const bool same = bit_equal(e.value, initial.params.at(e.name));
    if (tc.policy.trainable(e.name)) {
      moved += same ? 0 : 1;
    } else {
      ++frozen;
      changed += same ? 0 : 1;
    }
  }

  const Model<float> probe = build_model(ViTConfig{});
  const std::size_t n_probe = count_params(probe, FreezePolicy::linear_probe()).trainable;
  const std::size_t n_frozen = count_params(m, FreezePolicy::prompts_and_head()).trainable;
  const std::size_t n_learn = count_params(m, FreezePolicy::learnable_ca()).trainable;
  const bool order = n_probe < n_frozen && n_frozen < n_learn;
  const bool ok = copies && changed == 0 && moved > 0 && order;
  return {ok, std::to_string(shared) + " CA projections " + (copies ? "bit-equal" : "NOT equal") +
                  " to SA after load; after " + std::to_string(kFrozenSteps) + " steps " + std::to_string(changed) +
                  " of " + std::to_string(frozen) + " frozen tensors changed (" + std::to_string(moved) +
                  " trainable moved); trainable " + std::to_string(n_probe) + " < " + std::to_string(n_frozen) +
                  " < " + std::to_string(n_learn)};
}

// 7. Ablation directions at toy scale.
Outcome ablations(const Model<float>& backbone, const LabSettings& settings, double backbone_seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult sharing = run_sharing_ablation(all_sharing_arms(), settings, backbone);
  const ExperimentResult trend = run_trend_experiment({4, 16, 64}, settings, backbone, kBandPoints);
  const double secs = seconds_since(t0) + backbone_seconds;

  const fs::path out = "acceptance_out";
  write_result(sharing, out);
  write_result(trend, out);

  // The trend's CVPT arms count as CVPT arms for the probe comparison too.
  double probe = -1.0;
  for (const auto& row : sharing.rows) {
    if (row[0] == "linear-probe") probe = std::stod(row[3]);
  }
  bool trend_ge_probe = probe >= 0.0;
  std::string below;
  for (const auto& row : trend.rows) {
    if (row[0] == "cvpt" && std::stod(row[3]) < probe) {
      trend_ge_probe = false;
      below += " cvpt-m" + row[1];
    }
  }
  const Verdict& sf = need_verdict(sharing, "shared_frozen_ge_random_frozen");
  const Verdict& ge = need_verdict(sharing, "all_arms_ge_probe");
  const Verdict& band = need_verdict(trend, "cvpt_spread_within_band");
  const Verdict& peak = need_verdict(trend, "vpt_largest_below_peak");
  const bool ok = sf.passed && ge.passed && trend_ge_probe && band.passed && peak.passed && secs < kAblationSeconds;
  auto mark = [](bool b) { return b ? std::string("ok") : std::string("FAIL"); };
  return {ok, "shared>=random frozen " + mark(sf.passed) + " (" + sf.detail + "); CVPT arms>=probe " +
                  mark(ge.passed && trend_ge_probe) + " (" + ge.detail + (below.empty() ? "" : ";" + below) +
                  "); CVPT spread " + mark(band.passed) + " (" + band.detail + "); VPT m=64 below peak " +
                  mark(peak.passed) + " (" + peak.detail + "); runtime " + num(secs) + " s incl. backbone (limit " +
                  num(kAblationSeconds) + ")"};
}

// 8. Every subcommand writes byte-identical CSVs when rerun.
std::map<std::string, std::string> read_csvs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    const auto bytes = read_file_bytes(e.path());
    out[e.path().filename().string()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

Outcome determinism(const std::string& lab) {
  if (lab.empty() || !fs::exists(lab)) return {false, "cvpt_lab binary not found: '" + lab + "'"};
  const fs::path root = fs::temp_directory_path() / "cvpt_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path bb = root / "backbone.ckpt";
  save_checkpoint(build_model(ViTConfig{}), bb);
  const std::string small = " --data synth:10x4@2#1 --steps 3 --backbone " + bb.string();
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"train", "train --seed 5 --steps 5 --prompts 4 --data synth:10x4@2#1 --eval-data synth:10x3@2#2"},
      {"eval", "eval --seed 5 --data synth:10x3@2#2 --model " + (root / "train_a" / "model.ckpt").string()},
      {"gradcheck", "gradcheck --seed 5 --prompts 4 --coords 3"},
      {"analyze-attention", "analyze-attention --seed 5 --random --counts 0,1,5,20"},
      {"prompt-drop", "prompt-drop --seed 5 --counts 1,8 --inputs 2"},
      {"cost-sweep", "cost-sweep --seed 5"},
      {"ablate-position", "ablate-position --seed 5 --positions 1,3" + small},
      {"ablate-sharing", "ablate-sharing --seed 5" + small},
      {"trend", "trend --seed 5 --counts 2,4" + small},
  };
  std::string detail;
  bool ok = true;
  std::size_t files = 0;
  for (const auto& [name, args] : runs) {
    std::map<std::string, std::string> got[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path out = root / (name + (k == 0 ? "_a" : "_b"));
      const std::string cmd = "\"" + lab + "\" " + args + " --out " + out.string() + " > " +
                              (root / (name + ".log")).string() + " 2>&1";
      const int rc = std::system(cmd.c_str());
      if (rc != 0 && WEXITSTATUS(rc) == 2) {
        ok = false;
        detail += " " + name + ":error";
      }
      got[k] = read_csvs(out);
    }
    if (got[0].empty() || got[0] != got[1]) {
      ok = false;
      detail += " " + name + (got[0].empty() ? ":no-csv" : ":differs");
    }
    files += got[0].size();
  }
  if (ok) fs::remove_all(root);
  return {ok, std::to_string(runs.size()) + " subcommands, " + std::to_string(files) +
                  " CSV files byte-identical across reruns" + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string lab;
  std::vector<int> only;
  app.add_option("lab", lab, "Path to the cvpt_lab binary");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  const LabSettings settings;
  std::optional<Model<float>> backbone;
  double backbone_seconds = 0.0;
  auto get_backbone = [&]() -> const Model<float>& {
    if (!backbone) {
      const auto t0 = std::chrono::steady_clock::now();
      backbone = obtain_backbone(settings);
      backbone_seconds = seconds_since(t0);
    }
    return *backbone;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", [] { return gradient_integrity(); }},
      {"backbone preservation", [&] { return backbone_preservation(get_backbone()); }},
      {"prompt-drop equivalence", [] { return prompt_drop(); }},
      {"dilution law", [&] { return dilution(get_backbone()); }},
      {"cost model exactness", [] { return cost_model(); }},
      {"weight sharing", [&] { return weight_sharing(get_backbone(), settings); }},
      {"ablation directions", [&] {
         const Model<float>& bb = get_backbone();
         return ablations(bb, settings, backbone_seconds);
       }},
      {"determinism", [&] { return determinism(lab); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!wanted(k)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("[%s] %d %s (%.1f s): %s\n", o.passed ? "PASS" : "FAIL", k, criteria[i].first.c_str(),
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
