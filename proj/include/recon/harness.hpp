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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "recon/checkpoint.hpp"
#include "recon/config.hpp"
#include "recon/data.hpp"
#include "recon/geom.hpp"
#include "recon/losses.hpp"
#include "recon/model.hpp"
#include "recon/teachers.hpp"
#include "recon/tokenizer.hpp"

namespace recon::harness
{

enum class Mode {recon_cmc, recon_smc, cmc_only, smc_only, mpm_only, multitask, two_tower};

Mode mode_from_string(const std::string & s);
std::string to_string(Mode m);

/// Linear warmup from 0 to base_lr, then cosine decay to min_lr at total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
  double base_lr, double min_lr);

struct OptimizerConfig
{
  double lr = 5e-4;
  double weight_decay = 5e-2;
  std::int64_t warmup_epochs = 10;
  std::int64_t epochs = 300;
  std::int64_t batch = 128;
  double min_lr = 1e-6;
  /// Learning rate used instead of `lr` by the cmc_only / smc_only baselines.
  double contrastive_baseline_lr = 1e-4;
  /// When > 0, overrides epochs * steps_per_epoch.
  std::int64_t max_steps = 0;
};

struct TeacherConfig
{
  /// RCEMB1 tables; when empty the oracle teacher stands in for that modality.
  std::string image_path;
  std::string text_path;
  teach::OracleTeacherSpec oracle;
  bool unpaired = false;
};

struct RunConfig
{
  Mode mode = Mode::recon_cmc;
  OptimizerConfig optim;
  ModelConfig model;
  TeacherConfig teachers;
  std::string data;     // manifest path
  std::string out_dir;  // checkpoint + metrics destination; empty = none
  std::uint64_t seed = 0;
  loss::Metric metric = loss::Metric::smooth_l1;
  double temperature = loss::kDefaultTemperature;
  bool normalize_features = true;
  bool freeze_teachers = true;
  bool deterministic = true;
  bool wide_precision = false;
  double rec_weight = 1.0;
  double con_weight = 1.0;
  geom::AugmentSpec augment{.kind = geom::AugmentKind::rotation};
  std::int64_t eval_every_epochs = 1;
  /// Score held-out CON on unmasked inputs so every mode sees the same tokens.
  bool eval_con_unmasked = true;
  bool track_con_encoder_grad = true;
};

/// Named presets: "base" (Base, published recipe), "tiny" (Tiny, batch 32),
/// "micro" (hidden 64, G=16, S=16, batch 16, 2k steps), "grad" (hidden 16,
/// 2 layers, G=8, S=4; gradient checks).
void apply_preset(RunConfig & cfg, const std::string & name);

/// Architecture, queries and reconstruction flag implied by the training mode.
ModelConfig model_for_mode(Mode mode, ModelConfig base);

/// Effective base learning rate for the mode.
double base_lr_for(const RunConfig & cfg);

void to_json(nlohmann::json & j, const RunConfig & cfg);
void from_json(const nlohmann::json & j, RunConfig & cfg);

/// Normalized clouds of every manifest sample, loaded once.
class CloudStore
{
public:
  explicit CloudStore(const data::DatasetManifest & manifest);
  const geom::PointCloud & at(const std::string & id) const;

private:
  std::unordered_map<std::string, geom::PointCloud> clouds_;
};

/// Patchifies, augments and masks a list of samples into one token batch.
/// Per-sample seeds derive from (seed, sample id).
tok::TokenBatch make_batch(const CloudStore & clouds, const ModelConfig & cfg,
  std::span<const data::Sample * const> samples, double mask_ratio, const geom::AugmentSpec & augment,
  std::uint64_t seed, torch::Dtype dtype = torch::kFloat32);

/// Frozen teacher features for training and zero-shot, file-backed or oracle.
class TeacherBank
{
public:
  TeacherBank(const TeacherConfig & cfg, const data::DatasetManifest & manifest);

  std::uint32_t image_dim() const;
  std::uint32_t text_dim() const;

  torch::Tensor image(std::span<const data::Sample * const> samples) const;
  torch::Tensor text(std::span<const data::Sample * const> samples) const;

  /// Class text embedding for zero-shot scoring (prompt ensemble for file teachers).
  std::vector<float> class_text(std::int64_t class_id, const std::string & class_name,
    const teach::PromptSet & prompts) const;
  /// Normalized embedding of every composed prompt (the anchor alone for the oracle).
  std::vector<std::vector<float>> prompt_embeddings(std::int64_t class_id, const std::string & class_name,
    const teach::PromptSet & prompts) const;
  bool oracle_text() const noexcept {return !text_table_.has_value();}

private:
  TeacherConfig cfg_;
  std::map<std::string, std::string> image_id_;  // sample id -> image embedding id
  std::optional<teach::TeacherEmbedding> image_table_;
  std::optional<teach::TeacherEmbedding> text_table_;
};

struct StepLog
{
  std::int64_t step = 0;
  double lr = 0.0;
  loss::LossReport report;
  /// ||dCON/d(encoder)||, measured on the first step of each epoch.
  std::optional<double> con_encoder_grad_norm;
};

struct EpochLog
{
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double heldout_con = 0.0;  // per-sample mean over the test split
  double heldout_rec = 0.0;
};

struct SplitLoss
{
  double con = 0.0;  // per-sample mean
  double rec = 0.0;  // mean over masked patches
};

struct PretrainResult
{
  model::ReConModel model{nullptr};
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  SplitLoss initial_train;
  SplitLoss final_train;
  SplitLoss final_heldout;
};

/// Loss terms of one forward pass for the configured mode.
struct StepLosses
{
  torch::Tensor rec;
  torch::Tensor con;
  std::map<std::string, torch::Tensor> components;
};

StepLosses compute_losses(const RunConfig & cfg, model::ReConModel & model, const tok::TokenBatch & batch,
  std::span<const data::Sample * const> samples, const TeacherBank & teachers, bool stop_grad);

/// Eval-mode losses over a split with fixed masks.
SplitLoss evaluate_losses(const RunConfig & cfg, model::ReConModel & model, const CloudStore & clouds,
  std::span<const data::Sample * const> samples, const TeacherBank & teachers);

/// Full pretraining loop. Writes checkpoint.json/.bin, metrics.jsonl and
/// epochs.csv into cfg.out_dir when it is set.
PretrainResult pretrain(const RunConfig & cfg, const data::DatasetManifest & manifest);

enum class Protocol {FULL, MLP_LINEAR, MLP_3};

Protocol protocol_from_string(const std::string & s);
std::string to_string(Protocol p);

struct ProtocolSpec
{
  Protocol protocol = Protocol::FULL;
  std::int64_t head_hidden = 256;
  std::int64_t epochs = 50;
  std::int64_t batch = 16;
  /// Fine-tuning runs well below the pretraining rate; 1e-3 destabilizes FULL.
  double lr = 3e-4;
  double weight_decay = 5e-2;
  std::int64_t warmup_epochs = 2;
  /// Rotation keeps synthetic labels; anisotropic scaling blurs the families.
  geom::AugmentSpec augment{.kind = geom::AugmentKind::rotation};
  std::uint64_t seed = 0;
  /// Expected checkpoint variant; empty accepts any.
  std::optional<Variant> expect_variant;
};

struct FinetuneReport
{
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

/// Trains a classifier on `train` (labels = class ids remapped through
/// `label_of`) and reports top-1 on both sets. `backbone` is left untouched;
/// the protocol works on a copy.
FinetuneReport finetune(model::ReConModel & backbone, const ProtocolSpec & spec, const CloudStore & clouds,
  std::span<const data::Sample * const> train, std::span<const data::Sample * const> test,
  std::int64_t num_classes, const std::map<std::int64_t, std::int64_t> & label_of = {});

enum class PromptAggregation {embedding_mean, similarity_mean};

struct ZeroShotOptions
{
  teach::PromptSet prompts;
  bool ensemble = true;
  PromptAggregation aggregation = PromptAggregation::embedding_mean;
  std::uint64_t seed = 0;
};

struct ZeroShotReport
{
  double top1 = 0.0;
  std::vector<std::int64_t> predictions;
};

/// argmax over classes of cos(normalize(IMG + TXT feature), class text embedding);
/// ties resolve to the lower class index.
std::int64_t argmax_cosine(std::span<const float> feature, const std::vector<std::vector<float>> & classes);

ZeroShotReport zeroshot(model::ReConModel & model, const data::DatasetManifest & manifest,
  const CloudStore & clouds, std::span<const data::Sample * const> samples, const TeacherBank & teachers,
  const ZeroShotOptions & opt);

struct FewShotReport
{
  double mean = 0.0;
  double std = 0.0;  // population std over runs
  std::vector<double> accuracies;
};

FewShotReport fewshot(model::ReConModel & backbone, const data::DatasetManifest & manifest,
  const CloudStore & clouds, const data::EpisodeSpec & episodes, const ProtocolSpec & protocol);

/// Mean attention distance (L x H) of the encoder over a split, eval mode, no masking.
torch::Tensor analyze_attention(model::ReConModel & model, const CloudStore & clouds,
  std::span<const data::Sample * const> samples, std::uint64_t seed);

void write_attention_csv(const std::filesystem::path & path, const torch::Tensor & distances);

}  // namespace recon::harness
