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

// Command-line front end: data generation, pretraining and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "recon/error.hpp"
#include "recon/harness.hpp"
#include "recon/seed.hpp"

using namespace recon;

namespace
{

struct RunFlags
{
  std::string config;
  std::string preset;
  std::string mode;
  std::optional<double> mask_ratio;
  std::string stop_grad;
  std::string metric;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
  std::optional<std::int64_t> max_steps;
};

void add_run_flags(CLI::App * app, RunFlags & f)
{
  app->add_option("--config", f.config, "JSON run config");
  app->add_option("--preset", f.preset, "base | tiny | micro | grad");
  app->add_option("--mode", f.mode, "recon_cmc | recon_smc | cmc_only | smc_only | mpm_only | multitask | two_tower");
  app->add_option("--mask-ratio", f.mask_ratio);
  app->add_option("--stop-grad", f.stop_grad, "on | off")->check(CLI::IsMember({"on", "off"}));
  app->add_option("--metric", f.metric, "infonce | l2 | smooth_l1 | cosine");
  app->add_option("--seed", f.seed);
  app->add_option("--data", f.data, "dataset manifest");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--max-steps", f.max_steps);
}

harness::RunConfig resolve(const RunFlags & f)
{
  // The preset is applied first so the config file and flags refine it.
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    check(is.good(), Errc::Io, "cannot open config " + f.config);
    try {
      is >> j;
    } catch (const nlohmann::json::exception & e) {
      throw Error(Errc::BadConfig, f.config + ": " + e.what());
    }
  }
  if (!f.preset.empty()) {
    j["preset"] = f.preset;
  }
  harness::RunConfig cfg;
  harness::from_json(j, cfg);
  if (!f.mode.empty()) {
    cfg.mode = harness::mode_from_string(f.mode);
  }
  if (f.mask_ratio) {
    cfg.model.mask_ratio = *f.mask_ratio;
  }
  if (!f.stop_grad.empty()) {
    cfg.model.stop_grad = f.stop_grad == "on";
  }
  if (!f.metric.empty()) {
    cfg.metric = loss::metric_from_string(f.metric);
  }
  if (f.seed) {
    cfg.seed = *f.seed;
  }
  if (!f.data.empty()) {
    cfg.data = f.data;
  }
  if (!f.out.empty()) {
    cfg.out_dir = f.out;
  }
  if (f.max_steps) {
    cfg.optim.max_steps = *f.max_steps;
  }
  check(!cfg.data.empty(), Errc::BadConfig, "no dataset manifest given (--data)");
  return cfg;
}

std::vector<const data::Sample *> split_or_all(const data::DatasetManifest & m, const std::string & split)
{
  if (split == "all") {
    std::vector<const data::Sample *> out;
    for (const auto & s : m.samples) {
      out.push_back(&s);
    }
    return out;
  }
  auto out = m.split_samples(split);
  check(!out.empty(), Errc::EmptySet, "split '" + split + "' is empty");
  return out;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"ReCon point cloud pretraining and evaluation"};
  app.require_subcommand(1);

  // gen-data
  std::string gen_out;
  std::size_t gen_classes = 5;
  std::size_t gen_per_class = 20;
  std::size_t gen_points = 1024;
  std::uint64_t gen_seed = 0;
  auto * gen = app.add_subcommand("gen-data", "Generate a synthetic shape dataset");
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--classes", gen_classes);
  gen->add_option("--per-class", gen_per_class);
  gen->add_option("--points", gen_points);
  gen->add_option("--seed", gen_seed);

  RunFlags pre_flags;
  auto * pre = app.add_subcommand("pretrain", "Pretrain a model");
  add_run_flags(pre, pre_flags);

  // evaluation commands share a checkpoint + manifest
  std::string ckpt;
  std::string split = "test";
  std::string protocol = "FULL";
  std::int64_t ft_epochs = 50;
  double ft_lr = harness::ProtocolSpec{}.lr;
  std::uint64_t eval_seed = 0;
  std::string expect_variant;
  RunFlags eval_flags;

  auto * ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on the train split");
  ft->add_option("--checkpoint", ckpt)->required();
  ft->add_option("--data", eval_flags.data)->required();
  ft->add_option("--protocol", protocol, "FULL | MLP_LINEAR | MLP_3");
  ft->add_option("--epochs", ft_epochs);
  ft->add_option("--lr", ft_lr);
  ft->add_option("--seed", eval_seed);
  ft->add_option("--expect-variant", expect_variant);

  bool no_ensemble = false;
  std::string zs_aggregation = "embedding_mean";
  auto * zs = app.add_subcommand("zeroshot", "Zero-shot classification against class text embeddings");
  zs->add_option("--checkpoint", ckpt)->required();
  zs->add_option("--data", eval_flags.data)->required();
  zs->add_option("--split", split, "train | test | all");
  zs->add_option("--config", eval_flags.config, "run config carrying the teacher setup");
  zs->add_flag("--no-ensemble", no_ensemble);
  zs->add_option("--aggregation", zs_aggregation, "embedding_mean | similarity_mean");

  data::EpisodeSpec episodes;
  auto * fs = app.add_subcommand("fewshot", "Few-shot episodes");
  fs->add_option("--checkpoint", ckpt)->required();
  fs->add_option("--data", eval_flags.data)->required();
  fs->add_option("--ways", episodes.ways);
  fs->add_option("--shots", episodes.shots);
  fs->add_option("--queries", episodes.queries_per_class);
  fs->add_option("--runs", episodes.runs);
  fs->add_option("--protocol", protocol);
  fs->add_option("--epochs", ft_epochs);
  fs->add_option("--lr", ft_lr);
  fs->add_option("--seed", eval_seed);

  std::string csv_out;
  auto * ad = app.add_subcommand("attn-dist", "Per-layer, per-head mean attention distance");
  ad->add_option("--checkpoint", ckpt)->required();
  ad->add_option("--data", eval_flags.data)->required();
  ad->add_option("--split", split);
  ad->add_option("--out", csv_out)->required();
  ad->add_option("--seed", eval_seed);

  std::string dump_image;
  std::string dump_text;
  bool dump_prompts = false;
  teach::OracleTeacherSpec oracle;
  auto * dump = app.add_subcommand("dump-oracle-teacher", "Write oracle teachers as RCEMB1 tables");
  dump->add_option("--data", eval_flags.data)->required();
  dump->add_option("--image-out", dump_image);
  dump->add_option("--text-out", dump_text);
  dump->add_flag("--prompts", dump_prompts, "also emit every prompt-grid string");
  dump->add_option("--dim", oracle.dim);
  dump->add_option("--sigma", oracle.noise_sigma);
  dump->add_option("--seed", oracle.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    torch::set_num_threads(1);
    nlohmann::json result;
    if (*gen) {
      auto m = data::gen_synthetic(gen_out, gen_classes, gen_per_class, gen_points, gen_seed);
      result = {{"manifest", (std::filesystem::path(gen_out) / "manifest.json").string()},
        {"samples", m.samples.size()}, {"train", m.split_samples("train").size()},
        {"test", m.split_samples("test").size()}};
    } else if (*pre) {
      auto cfg = resolve(pre_flags);
      auto manifest = data::load_manifest(cfg.data);
      auto res = harness::pretrain(cfg, manifest);
      result = {{"steps", res.steps.size()},
        {"initial_train", {{"rec", res.initial_train.rec}, {"con", res.initial_train.con}}},
        {"final_train", {{"rec", res.final_train.rec}, {"con", res.final_train.con}}},
        {"final_heldout", {{"rec", res.final_heldout.rec}, {"con", res.final_heldout.con}}}};
    } else if (*ft || *fs || *zs || *ad) {
      auto manifest = data::load_manifest(eval_flags.data);
      harness::CloudStore clouds(manifest);
      model::CheckpointMeta meta;
      // a run directory stands for the checkpoint written into it
      std::filesystem::path ckpt_path = ckpt;
      if (std::filesystem::is_directory(ckpt_path)) {
        ckpt_path /= "checkpoint.json";
      }
      auto model = model::load_checkpoint(ckpt_path, &meta);
      if (*ft || *fs) {
        harness::ProtocolSpec spec;
        spec.protocol = harness::protocol_from_string(protocol);
        spec.epochs = ft_epochs;
        spec.lr = ft_lr;
        spec.seed = eval_seed;
        if (!expect_variant.empty()) {
          spec.expect_variant = variant_from_string(expect_variant);
        }
        if (*ft) {
          auto train = manifest.split_samples("train");
          auto test = manifest.split_samples("test");
          auto rep = harness::finetune(model, spec, clouds, train, test,
              static_cast<std::int64_t>(manifest.classes.size()));
          result = {{"protocol", protocol}, {"train_accuracy", rep.train_accuracy},
            {"test_accuracy", rep.test_accuracy}};
        } else {
          auto rep = harness::fewshot(model, manifest, clouds, episodes, spec);
          result = {{"protocol", protocol}, {"mean", rep.mean}, {"std", rep.std},
            {"accuracies", rep.accuracies}};
        }
      } else if (*zs) {
        harness::RunConfig cfg;
        if (meta.extra.contains("run")) {
          harness::from_json(meta.extra.at("run"), cfg);
        }
        if (!eval_flags.config.empty()) {
          std::ifstream is(eval_flags.config);
          check(is.good(), Errc::Io, "cannot open config " + eval_flags.config);
          harness::from_json(nlohmann::json::parse(is), cfg);
        }
        harness::TeacherBank teachers(cfg.teachers, manifest);
        harness::ZeroShotOptions opt;
        opt.prompts = teach::default_prompt_grid();
        opt.ensemble = !no_ensemble;
        opt.aggregation = zs_aggregation == "similarity_mean" ? harness::PromptAggregation::similarity_mean :
          harness::PromptAggregation::embedding_mean;
        auto samples = split_or_all(manifest, split);
        auto rep = harness::zeroshot(model, manifest, clouds, samples, teachers, opt);
        result = {{"split", split}, {"top1", rep.top1}, {"predictions", rep.predictions}};
      } else {
        auto samples = split_or_all(manifest, split);
        auto d = harness::analyze_attention(model, clouds, samples, eval_seed);
        harness::write_attention_csv(csv_out, d);
        result = {{"csv", csv_out}, {"layers", d.size(0)}, {"heads", d.size(1)}};
      }
    } else if (*dump) {
      auto manifest = data::load_manifest(eval_flags.data);
      oracle.classes = std::max<std::uint32_t>(oracle.classes, static_cast<std::uint32_t>(manifest.classes.size()));
      if (!dump_image.empty()) {
        teach::TeacherEmbedding table(teach::Modality::image, oracle.dim);
        for (const auto & s : manifest.samples) {
          if (!table.contains(s.image_emb_id)) {
            table.add(s.image_emb_id, teach::oracle_teacher(oracle, static_cast<std::uint32_t>(s.class_id),
              fnv1a(s.image_emb_id)));
          }
        }
        teach::save_embeddings(dump_image, table);
        result["image_records"] = table.size();
      }
      if (!dump_text.empty()) {
        teach::TeacherEmbedding table(teach::Modality::text, oracle.dim);
        const auto grid = dump_prompts ? teach::default_prompt_grid() : teach::PromptSet{};
        for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
          const auto anchor = teach::class_anchor(oracle, static_cast<std::uint32_t>(c));
          for (const auto & p : teach::compose_prompts(manifest.classes[c], grid)) {
            if (!table.contains(p)) {
              table.add(p, anchor);
            }
          }
          if (!table.contains(manifest.classes[c])) {
            table.add(manifest.classes[c], anchor);
          }
        }
        teach::save_embeddings(dump_text, table);
        result["text_records"] = table.size();
      }
    }
    std::cout << result.dump() << '\n';
  } catch (const Error & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
