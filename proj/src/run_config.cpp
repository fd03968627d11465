// Copyright (c) 2026 The recon3d Authors
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

#include <cmath>
#include <numbers>

#include "recon/error.hpp"
#include "recon/harness.hpp"

namespace recon::harness
{

Mode mode_from_string(const std::string & s)
{
  if (s == "recon_cmc") {return Mode::recon_cmc;}
  if (s == "recon_smc") {return Mode::recon_smc;}
  if (s == "cmc_only") {return Mode::cmc_only;}
  if (s == "smc_only") {return Mode::smc_only;}
  if (s == "mpm_only") {return Mode::mpm_only;}
  if (s == "multitask") {return Mode::multitask;}
  if (s == "two_tower") {return Mode::two_tower;}
  throw Error(Errc::BadConfig, "unknown mode '" + s + "'");
}

std::string to_string(Mode m)
{
  switch (m) {
    case Mode::recon_cmc: return "recon_cmc";
    case Mode::recon_smc: return "recon_smc";
    case Mode::cmc_only: return "cmc_only";
    case Mode::smc_only: return "smc_only";
    case Mode::mpm_only: return "mpm_only";
    case Mode::multitask: return "multitask";
    case Mode::two_tower: return "two_tower";
  }
  return "recon_cmc";
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
  double base_lr, double min_lr)
{
  check(warmup_steps >= 0 && warmup_steps < total_steps, Errc::BadSchedule,
    "warmup steps (" + std::to_string(warmup_steps) + ") must be below total steps (" +
    std::to_string(total_steps) + ")");
  check(step >= 0 && step < total_steps, Errc::BadSchedule, "step outside the schedule");
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
    static_cast<double>(total_steps - warmup_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

void apply_preset(RunConfig & cfg, const std::string & name)
{
  if (name == "base") {
    cfg.model = variant_config(Variant::Base);
    cfg.optim = OptimizerConfig{};
    return;
  }
  if (name == "tiny") {
    cfg.model = variant_config(Variant::Tiny);
    cfg.optim.batch = 32;
    return;
  }
  if (name == "micro") {
    ModelConfig m = variant_config(Variant::Custom);
    m.layers = 4;
    m.hidden = 64;
    m.mlp = 256;
    m.heads = 4;
    m.patch_count = 16;
    m.patch_size = 16;
    m.rec_decoder_depth = 2;
    m.embed_point_hidden = 32;
    m.embed_point_out = 64;
    m.embed_fuse_hidden = 128;
    m.pos_hidden = 64;
    m.image_dim = 32;
    m.text_dim = 32;
    m.self_dim = 32;
    cfg.model = m;
    cfg.optim.batch = 16;
    cfg.optim.max_steps = 2000;
    cfg.optim.lr = 1e-3;
    cfg.optim.contrastive_baseline_lr = 1e-4;
    cfg.optim.warmup_epochs = 10;
    cfg.teachers.oracle.dim = 32;
    return;
  }
  if (name == "grad") {
    ModelConfig m = variant_config(Variant::Custom);
    m.layers = 2;
    m.hidden = 16;
    m.mlp = 32;
    m.heads = 2;
    m.patch_count = 8;
    m.patch_size = 4;
    m.rec_decoder_depth = 1;
    m.drop_path = 0.0;
    m.embed_point_hidden = 8;
    m.embed_point_out = 16;
    m.embed_fuse_hidden = 16;
    m.pos_hidden = 8;
    m.image_dim = 8;
    m.text_dim = 8;
    m.self_dim = 8;
    cfg.model = m;
    cfg.optim.batch = 4;
    cfg.teachers.oracle.dim = 8;
    return;
  }
  throw Error(Errc::BadConfig, "unknown preset '" + name + "'");
}

ModelConfig model_for_mode(Mode mode, ModelConfig base)
{
  switch (mode) {
    case Mode::recon_cmc:
      base.arch = Arch::recon;
      base.reconstruction = true;
      base.queries = {QueryKind::IMG, QueryKind::TXT};
      break;
    case Mode::recon_smc:
      base.arch = Arch::recon;
      base.reconstruction = true;
      base.queries = {QueryKind::SELF};
      break;
    case Mode::cmc_only:
      base.arch = Arch::plain;
      base.reconstruction = false;
      base.mask_ratio = 0.0;
      base.queries = {QueryKind::IMG, QueryKind::TXT};
      break;
    case Mode::smc_only:
      base.arch = Arch::plain;
      base.reconstruction = false;
      base.mask_ratio = 0.0;
      base.queries = {QueryKind::SELF};
      break;
    case Mode::mpm_only:
      base.arch = Arch::plain;
      base.reconstruction = true;
      base.queries = {};
      break;
    case Mode::multitask:
      base.arch = Arch::plain;
      base.reconstruction = true;
      base.queries = {QueryKind::IMG, QueryKind::TXT};
      break;
    case Mode::two_tower:
      base.arch = Arch::two_tower;
      base.reconstruction = true;
      base.queries = {QueryKind::IMG, QueryKind::TXT};
      break;
  }
  return base;
}

double base_lr_for(const RunConfig & cfg)
{
  const bool contrastive_only = cfg.mode == Mode::cmc_only || cfg.mode == Mode::smc_only;
  return contrastive_only ? cfg.optim.contrastive_baseline_lr : cfg.optim.lr;
}

void to_json(nlohmann::json & j, const RunConfig & cfg)
{
  j = nlohmann::json{
    {"mode", to_string(cfg.mode)},
    {"optimizer", {
        {"lr", cfg.optim.lr},
        {"weight_decay", cfg.optim.weight_decay},
        {"warmup_epochs", cfg.optim.warmup_epochs},
        {"epochs", cfg.optim.epochs},
        {"batch", cfg.optim.batch},
        {"min_lr", cfg.optim.min_lr},
        {"contrastive_baseline_lr", cfg.optim.contrastive_baseline_lr},
        {"max_steps", cfg.optim.max_steps},
      }},
    {"model", cfg.model},
    {"teachers", {
        {"image_path", cfg.teachers.image_path},
        {"text_path", cfg.teachers.text_path},
        {"unpaired", cfg.teachers.unpaired},
        {"oracle", {
            {"classes", cfg.teachers.oracle.classes},
            {"dim", cfg.teachers.oracle.dim},
            {"noise_sigma", cfg.teachers.oracle.noise_sigma},
            {"seed", cfg.teachers.oracle.seed},
          }},
      }},
    {"data", cfg.data},
    {"out_dir", cfg.out_dir},
    {"seed", cfg.seed},
    {"metric", loss::to_string(cfg.metric)},
    {"temperature", cfg.temperature},
    {"normalize_features", cfg.normalize_features},
    {"freeze_teachers", cfg.freeze_teachers},
    {"deterministic", cfg.deterministic},
    {"wide_precision", cfg.wide_precision},
    {"rec_weight", cfg.rec_weight},
    {"con_weight", cfg.con_weight},
    {"augment", geom::to_string(cfg.augment.kind)},
    {"eval_every_epochs", cfg.eval_every_epochs},
    {"eval_con_unmasked", cfg.eval_con_unmasked},
    {"track_con_encoder_grad", cfg.track_con_encoder_grad},
  };
}

void from_json(const nlohmann::json & j, RunConfig & cfg)
{
  if (j.contains("preset")) {
    apply_preset(cfg, j.at("preset").get<std::string>());
  }
  if (j.contains("mode")) {
    cfg.mode = mode_from_string(j.at("mode").get<std::string>());
  }
  if (j.contains("optimizer")) {
    const auto & o = j.at("optimizer");
    cfg.optim.lr = o.value("lr", cfg.optim.lr);
    cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    cfg.optim.warmup_epochs = o.value("warmup_epochs", cfg.optim.warmup_epochs);
    cfg.optim.epochs = o.value("epochs", cfg.optim.epochs);
    cfg.optim.batch = o.value("batch", cfg.optim.batch);
    cfg.optim.min_lr = o.value("min_lr", cfg.optim.min_lr);
    cfg.optim.contrastive_baseline_lr = o.value("contrastive_baseline_lr", cfg.optim.contrastive_baseline_lr);
    cfg.optim.max_steps = o.value("max_steps", cfg.optim.max_steps);
  }
  if (j.contains("model")) {
    // a variant switch resets the table values, everything else patches the current config
    const auto & patch = j.at("model");
    nlohmann::json merged = patch.contains("variant") ?
      nlohmann::json(variant_config(variant_from_string(patch.at("variant").get<std::string>()))) :
      nlohmann::json(cfg.model);
    merged.merge_patch(patch);
    cfg.model = merged.get<ModelConfig>();
  }
  if (j.contains("teachers")) {
    const auto & t = j.at("teachers");
    cfg.teachers.image_path = t.value("image_path", cfg.teachers.image_path);
    cfg.teachers.text_path = t.value("text_path", cfg.teachers.text_path);
    cfg.teachers.unpaired = t.value("unpaired", cfg.teachers.unpaired);
    if (t.contains("oracle")) {
      const auto & o = t.at("oracle");
      cfg.teachers.oracle.classes = o.value("classes", cfg.teachers.oracle.classes);
      cfg.teachers.oracle.dim = o.value("dim", cfg.teachers.oracle.dim);
      cfg.teachers.oracle.noise_sigma = o.value("noise_sigma", cfg.teachers.oracle.noise_sigma);
      cfg.teachers.oracle.seed = o.value("seed", cfg.teachers.oracle.seed);
    }
  }
  cfg.data = j.value("data", cfg.data);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("metric")) {
    cfg.metric = loss::metric_from_string(j.at("metric").get<std::string>());
  }
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.normalize_features = j.value("normalize_features", cfg.normalize_features);
  cfg.freeze_teachers = j.value("freeze_teachers", cfg.freeze_teachers);
  cfg.deterministic = j.value("deterministic", cfg.deterministic);
  cfg.wide_precision = j.value("wide_precision", cfg.wide_precision);
  cfg.rec_weight = j.value("rec_weight", cfg.rec_weight);
  cfg.con_weight = j.value("con_weight", cfg.con_weight);
  if (j.contains("augment")) {
    cfg.augment.kind = geom::augment_kind_from_string(j.at("augment").get<std::string>());
  }
  cfg.eval_every_epochs = j.value("eval_every_epochs", cfg.eval_every_epochs);
  cfg.eval_con_unmasked = j.value("eval_con_unmasked", cfg.eval_con_unmasked);
  cfg.track_con_encoder_grad = j.value("track_con_encoder_grad", cfg.track_con_encoder_grad);
}

}  // namespace recon::harness
