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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "recon/error.hpp"
#include "recon/harness.hpp"
#include "recon/seed.hpp"

namespace recon::harness
{

namespace
{

bool is_cross_modal(Mode m)
{
  return m == Mode::recon_cmc || m == Mode::cmc_only || m == Mode::multitask || m == Mode::two_tower;
}

bool is_single_modal(Mode m)
{
  return m == Mode::recon_smc || m == Mode::smc_only;
}

torch::Dtype run_dtype(const RunConfig & cfg)
{
  return cfg.wide_precision ? torch::kFloat64 : torch::kFloat32;
}

std::vector<std::int64_t> labels_of(std::span<const data::Sample * const> samples)
{
  std::vector<std::int64_t> labels;
  labels.reserve(samples.size());
  for (const auto * s : samples) {
    labels.push_back(s->class_id);
  }
  return labels;
}

// Point-MAE style: no decay on biases, norm gains and learned tokens.
bool decays(const std::string & name, const torch::Tensor & p)
{
  if (p.dim() < 2) {
    return false;
  }
  return name.rfind("query_", 0) != 0 && name.rfind("mask_token", 0) != 0;
}

std::vector<torch::Tensor> encoder_parameters(model::ReConModelImpl & m)
{
  static const std::vector<std::string> groups{"patch_embed", "encoder_pos", "encoder", "encoder_norm"};
  const auto named = m.named_parameters();
  const auto by_group = model::parameter_groups(m);
  std::vector<torch::Tensor> out;
  for (const auto & g : groups) {
    auto it = by_group.find(g);
    if (it == by_group.end()) {
      continue;
    }
    for (const auto & name : it->second) {
      out.push_back(named[name]);
    }
  }
  return out;
}

double grad_norm(const torch::Tensor & loss, const std::vector<torch::Tensor> & params)
{
  if (!loss.requires_grad() || params.empty()) {
    return 0.0;
  }
  auto grads = torch::autograd::grad({loss}, params, {}, /*retain_graph=*/true, /*create_graph=*/false,
      /*allow_unused=*/true);
  double sq = 0.0;
  for (const auto & g : grads) {
    if (g.defined()) {
      sq += g.to(torch::kFloat64).pow(2).sum().item<double>();
    }
  }
  return std::sqrt(sq);
}

std::string fmt(double v)
{
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace

StepLosses compute_losses(const RunConfig & cfg, model::ReConModel & model, const tok::TokenBatch & batch,
  std::span<const data::Sample * const> samples, const TeacherBank & teachers, bool stop_grad)
{
  check(static_cast<std::int64_t>(samples.size()) == batch.batch(), Errc::BadBatch,
    "sample list and token batch differ in size");
  const auto & mcfg = model->config();
  model::ForwardOptions opt;
  opt.stop_grad = stop_grad;
  auto out = model->forward(batch, opt);

  const auto options = batch.centers.options();
  StepLosses res;
  res.rec = torch::zeros({}, options);
  res.con = torch::zeros({}, options);
  if (mcfg.reconstruction && out.reconstructed.defined() && batch.masked() > 0) {
    res.rec = loss::mpm_loss(out.reconstructed, out.target);
  }

  if (is_cross_modal(cfg.mode)) {
    const auto dtype = batch.centers.scalar_type();
    auto t_img = teachers.image(samples).to(dtype);
    auto t_txt = teachers.text(samples).to(dtype);
    auto l_img = loss::contrastive_loss(cfg.metric, out.features.at(QueryKind::IMG), t_img,
        cfg.temperature, cfg.normalize_features);
    auto l_txt = loss::contrastive_loss(cfg.metric, out.features.at(QueryKind::TXT), t_txt,
        cfg.temperature, cfg.normalize_features);
    res.components["img"] = l_img;
    res.components["txt"] = l_txt;
    res.con = l_img + l_txt;
  } else if (is_single_modal(cfg.mode)) {
    auto f = torch::nn::functional::normalize(out.features.at(QueryKind::SELF),
        torch::nn::functional::NormalizeFuncOptions().dim(-1));
    res.con = loss::supcon_loss(f, labels_of(samples), cfg.temperature);
    res.components["self"] = res.con;
  }
  return res;
}

SplitLoss evaluate_losses(const RunConfig & cfg, model::ReConModel & model, const CloudStore & clouds,
  std::span<const data::Sample * const> samples, const TeacherBank & teachers)
{
  check(!samples.empty(), Errc::EmptySet, "no samples to evaluate");
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto & mcfg = model->config();
  const auto batch_size = static_cast<std::size_t>(std::max<std::int64_t>(1, cfg.optim.batch));
  const auto eval_seed = mix_seed({cfg.seed, 0xE7A1});

  double con_sum = 0.0;
  double rec_sum = 0.0;
  std::int64_t rec_patches = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    auto batch = make_batch(clouds, mcfg, chunk, mcfg.mask_ratio, geom::AugmentSpec{}, eval_seed,
        run_dtype(cfg));
    auto l = compute_losses(cfg, model, batch, chunk, teachers, true);
    if (cfg.eval_con_unmasked && mcfg.mask_ratio > 0.0) {
      auto full = make_batch(clouds, mcfg, chunk, 0.0, geom::AugmentSpec{}, eval_seed, run_dtype(cfg));
      con_sum += compute_losses(cfg, model, full, chunk, teachers, true).con.item<double>();
    } else {
      con_sum += l.con.item<double>();
    }
    const auto patches = batch.batch() * batch.masked();
    rec_sum += l.rec.item<double>() * static_cast<double>(patches);
    rec_patches += patches;
  }
  if (was_training) {
    model->train();
  }
  SplitLoss out;
  out.con = con_sum / static_cast<double>(samples.size());
  out.rec = rec_patches > 0 ? rec_sum / static_cast<double>(rec_patches) : 0.0;
  return out;
}

PretrainResult pretrain(const RunConfig & cfg, const data::DatasetManifest & manifest)
{
  check(cfg.optim.lr > 0.0 && cfg.optim.contrastive_baseline_lr > 0.0, Errc::BadConfig,
    "learning rate must be positive");
  check(cfg.optim.warmup_epochs <= cfg.optim.epochs, Errc::BadConfig, "warmup_epochs exceeds epochs");
  check(cfg.optim.batch > 0, Errc::BadConfig, "batch must be positive");
  if (cfg.deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }

  const auto mcfg = model_for_mode(cfg.mode, cfg.model);
  validate(mcfg);
  TeacherBank teachers(cfg.teachers, manifest);
  if (is_cross_modal(cfg.mode)) {
    check(mcfg.image_dim == teachers.image_dim() && mcfg.text_dim == teachers.text_dim(),
      Errc::ShapeMismatch, "projection head widths (" + std::to_string(mcfg.image_dim) + ", " +
      std::to_string(mcfg.text_dim) + ") do not match teacher widths (" +
      std::to_string(teachers.image_dim()) + ", " + std::to_string(teachers.text_dim()) + ")");
  }
  CloudStore clouds(manifest);
  const auto train = manifest.split_samples("train");
  const auto test = manifest.split_samples("test");
  check(!train.empty(), Errc::EmptySet, "train split is empty");

  const auto model_seed = mix_seed({cfg.seed, 0x30DE1});
  PretrainResult res;
  res.model = model::build_model(mcfg, model_seed);
  auto & model = res.model;
  if (cfg.wide_precision) {
    model->to(torch::kFloat64);
  }
  model->train();

  const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.optim.batch), train.size());
  const auto steps_per_epoch = static_cast<std::int64_t>(train.size() / batch_size);
  const auto total_steps = cfg.optim.max_steps > 0 ? cfg.optim.max_steps : cfg.optim.epochs * steps_per_epoch;
  const auto warmup_steps = std::min(cfg.optim.warmup_epochs * steps_per_epoch, total_steps - 1);
  const double base_lr = base_lr_for(cfg);

  std::vector<torch::Tensor> decay;
  std::vector<torch::Tensor> no_decay;
  for (const auto & item : model->named_parameters()) {
    (decays(item.key(), item.value()) ? decay : no_decay).push_back(item.value());
  }
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, std::make_unique<torch::optim::AdamWOptions>(
      torch::optim::AdamWOptions(base_lr).betas({0.9, 0.999}).eps(1e-8).weight_decay(cfg.optim.weight_decay)));
  groups.emplace_back(no_decay, std::make_unique<torch::optim::AdamWOptions>(
      torch::optim::AdamWOptions(base_lr).betas({0.9, 0.999}).eps(1e-8).weight_decay(0.0)));
  torch::optim::AdamW optim(groups);
  const auto encoder_params = encoder_parameters(*model);

  std::ofstream metrics;
  std::ofstream epochs_csv;
  const std::filesystem::path out_dir = cfg.out_dir;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.jsonl", std::ios::binary);
    epochs_csv.open(out_dir / "epochs.csv", std::ios::binary);
    check(metrics.good() && epochs_csv.good(), Errc::Io, "cannot write metrics into " + cfg.out_dir);
    epochs_csv << "epoch,step,heldout_con,heldout_rec\n";
  }

  res.initial_train = evaluate_losses(cfg, model, clouds, train, teachers);

  auto log_epoch = [&](std::int64_t epoch, std::int64_t step) {
      if (test.empty()) {
        return;
      }
      auto held = evaluate_losses(cfg, model, clouds, test, teachers);
      res.epochs.push_back({epoch, step, held.con, held.rec});
      if (epochs_csv.is_open()) {
        epochs_csv << epoch << ',' << step << ',' << fmt(held.con) << ',' << fmt(held.rec) << '\n';
      }
    };

  std::vector<const data::Sample *> order(train.begin(), train.end());
  const bool stop_grad = mcfg.stop_grad;
  for (std::int64_t step = 0; step < total_steps; ++step) {
    const auto epoch = step / steps_per_epoch;
    const auto in_epoch = step % steps_per_epoch;
    if (in_epoch == 0) {
      order.assign(train.begin(), train.end());
      std::mt19937_64 rng(mix_seed({cfg.seed, 0x5EED, static_cast<std::uint64_t>(epoch)}));
      std::shuffle(order.begin(), order.end(), rng);
    }
    std::span<const data::Sample * const> chunk(order.data() + in_epoch * batch_size, batch_size);

    const double lr = lr_schedule(step, total_steps, warmup_steps, base_lr, cfg.optim.min_lr);
    for (auto & g : optim.param_groups()) {
      static_cast<torch::optim::AdamWOptions &>(g.options()).lr(lr);
    }

    auto batch = make_batch(clouds, mcfg, chunk, mcfg.mask_ratio, cfg.augment,
        mix_seed({cfg.seed, 0xBA7C, static_cast<std::uint64_t>(step)}), run_dtype(cfg));
    auto l = compute_losses(cfg, model, batch, chunk, teachers, stop_grad);

    StepLog log;
    log.step = step;
    log.lr = lr;
    if (cfg.track_con_encoder_grad && in_epoch == 0 && cfg.con_weight != 0.0) {
      log.con_encoder_grad_norm = grad_norm(l.con, encoder_params);
    }
    auto total = cfg.rec_weight * l.rec + cfg.con_weight * l.con;
    optim.zero_grad();
    total.backward();
    optim.step();

    std::map<std::string, double> comps;
    for (const auto & [k, v] : l.components) {
      comps[k] = v.item<double>();
    }
    log.report = loss::recon_total(cfg.rec_weight * l.rec.item<double>(),
        cfg.con_weight * l.con.item<double>(), comps);
    if (metrics.is_open()) {
      nlohmann::json j{
        {"step", step}, {"lr", log.lr}, {"total", log.report.total}, {"rec", log.report.rec},
        {"con", log.report.con}, {"components", log.report.con_components},
      };
      if (log.con_encoder_grad_norm) {
        j["con_encoder_grad_norm"] = *log.con_encoder_grad_norm;
      }
      metrics << j.dump() << '\n';
    }
    res.steps.push_back(std::move(log));

    const bool epoch_end = in_epoch == steps_per_epoch - 1;
    if (epoch_end && cfg.eval_every_epochs > 0 && (epoch + 1) % cfg.eval_every_epochs == 0) {
      log_epoch(epoch + 1, step + 1);
    } else if (step == total_steps - 1) {
      log_epoch(epoch + 1, step + 1);
    }
  }

  res.final_train = evaluate_losses(cfg, model, clouds, train, teachers);
  if (!test.empty()) {
    res.final_heldout = evaluate_losses(cfg, model, clouds, test, teachers);
  }

  if (!cfg.out_dir.empty()) {
    recon::model::CheckpointMeta meta;
    meta.config = model->config();
    meta.model_seed = model_seed;
    meta.run_seed = cfg.seed;
    nlohmann::json run = cfg;
    run.erase("out_dir");  // where a run was written is not part of it
    meta.extra = nlohmann::json{
      {"run", run},
      {"initial_train", {{"con", res.initial_train.con}, {"rec", res.initial_train.rec}}},
      {"final_train", {{"con", res.final_train.con}, {"rec", res.final_train.rec}}},
      {"final_heldout", {{"con", res.final_heldout.con}, {"rec", res.final_heldout.rec}}},
    };
    save_checkpoint(out_dir / "checkpoint.json", model, meta);
  }
  return res;
}

}  // namespace recon::harness
