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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "recon/error.hpp"
#include "recon/harness.hpp"

using namespace recon;
using namespace recon::harness;
namespace fs = std::filesystem;

namespace
{

Errc code_of(auto && fn)
{
  try {
    fn();
  } catch (const Error & e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::Io;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string & name)
{
  auto p = fs::temp_directory_path() / ("recon_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Shared small dataset: 3 classes x 8 clouds of 64 points.
const data::DatasetManifest & dataset()
{
  static const data::DatasetManifest m = [] {
      auto dir = scratch("data");
      data::gen_synthetic(dir, 3, 8, 64, 5);
      return data::load_manifest(dir / "manifest.json");
    }();
  return m;
}

RunConfig small_run(Mode mode = Mode::recon_cmc)
{
  RunConfig cfg;
  apply_preset(cfg, "grad");
  cfg.mode = mode;
  cfg.optim.max_steps = 6;
  cfg.optim.epochs = 2;
  cfg.optim.warmup_epochs = 1;
  cfg.data = (dataset().root / "manifest.json").string();
  return cfg;
}

}  // namespace

TEST_CASE("cosine schedule")
{
  const double base = 5e-4;
  const double floor = 1e-6;
  CHECK(lr_schedule(0, 100, 10, base, floor) == 0.0);
  CHECK(lr_schedule(5, 100, 10, base, floor) == doctest::Approx(base / 2));
  CHECK(lr_schedule(10, 100, 10, base, floor) == doctest::Approx(base).epsilon(1e-12));
  CHECK(std::abs(lr_schedule(55, 100, 10, base, floor) - (base + floor) / 2) <= 1e-9);
  const double one_step = (base - floor) * (1 - std::cos(std::numbers::pi / 90)) / 2;
  CHECK(lr_schedule(99, 100, 10, base, floor) - floor <= one_step + 1e-15);

  // continuous at the warmup boundary and monotone in each phase
  const double left = lr_schedule(9, 1000000, 10, base, floor);
  CHECK(std::abs(lr_schedule(10, 1000000, 10, base, floor) - base) <= 1e-12);
  CHECK(left == doctest::Approx(base * 0.9));
  double prev = base + 1;
  for (std::int64_t s = 10; s < 100; ++s) {
    const double v = lr_schedule(s, 100, 10, base, floor);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(lr_schedule(0, 5, 0, base, floor) == doctest::Approx(base));

  CHECK(code_of([] {lr_schedule(0, 10, 10, 1, 0);}) == Errc::BadSchedule);
  CHECK(code_of([] {lr_schedule(10, 10, 2, 1, 0);}) == Errc::BadSchedule);
  CHECK(code_of([] {lr_schedule(-1, 10, 2, 1, 0);}) == Errc::BadSchedule);
}

TEST_CASE("run config defaults, presets and JSON")
{
  RunConfig d;
  CHECK(d.optim.lr == 5e-4);
  CHECK(d.optim.weight_decay == 5e-2);
  CHECK(d.optim.epochs == 300);
  CHECK(d.optim.warmup_epochs == 10);
  CHECK(d.optim.batch == 128);

  RunConfig micro;
  apply_preset(micro, "micro");
  CHECK(micro.model.hidden == 64);
  CHECK(micro.model.patch_count == 16);
  CHECK(micro.model.patch_size == 16);
  CHECK(micro.optim.batch == 16);
  CHECK(micro.optim.max_steps == 2000);
  RunConfig tiny;
  apply_preset(tiny, "tiny");
  CHECK(tiny.model.hidden == 192);
  CHECK(tiny.optim.batch == 32);
  CHECK(code_of([&] {apply_preset(tiny, "huge");}) == Errc::BadConfig);

  auto cfg = small_run(Mode::two_tower);
  cfg.metric = loss::Metric::infonce;
  cfg.model.stop_grad = false;
  nlohmann::json j = cfg;
  auto back = j.get<RunConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.mode == Mode::two_tower);

  auto patched = nlohmann::json{{"preset", "grad"}, {"mode", "cmc_only"}, {"model", {{"layers", 3}}}}.get<RunConfig>();
  CHECK(patched.model.layers == 3);
  CHECK(patched.model.hidden == 16);
  CHECK(base_lr_for(patched) == patched.optim.contrastive_baseline_lr);

  for (auto m : {Mode::recon_cmc, Mode::recon_smc, Mode::cmc_only, Mode::smc_only, Mode::mpm_only,
      Mode::multitask, Mode::two_tower})
  {
    CHECK(mode_from_string(to_string(m)) == m);
  }
  CHECK(code_of([] {mode_from_string("nope");}) == Errc::BadConfig);
}

TEST_CASE("pretraining logs, totals and outputs")
{
  auto cfg = small_run();
  cfg.out_dir = scratch("run").string();
  auto res = pretrain(cfg, dataset());
  REQUIRE(res.steps.size() == 6);
  for (const auto & s : res.steps) {
    CHECK(s.report.total == s.report.rec + s.report.con);
    CHECK(s.report.rec > 0.0);
    CHECK(s.report.con > 0.0);
    CHECK(s.lr >= 0.0);
  }
  CHECK(res.steps[0].lr == 0.0);
  REQUIRE(res.steps[0].con_encoder_grad_norm.has_value());
  CHECK(*res.steps[0].con_encoder_grad_norm == 0.0);  // stop-gradient on

  const fs::path out = cfg.out_dir;
  std::ifstream metrics(out / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
  }
  CHECK(lines == 6);
  std::istringstream csv(slurp(out / "epochs.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,step,heldout_con,heldout_rec");
  CHECK(res.epochs.size() >= 1);

  model::CheckpointMeta meta;
  auto loaded = model::load_checkpoint(out / "checkpoint.json", &meta);
  CHECK(model::parameter_checksum(*loaded) == model::parameter_checksum(*res.model));
  CHECK(meta.run_seed == cfg.seed);
  CHECK(code_of([&] {model::load_checkpoint(out);}) == Errc::Io);
  CHECK(code_of([&] {data::load_manifest(out);}) == Errc::Io);

  // bit-for-bit reproducible
  auto again = cfg;
  again.out_dir = scratch("run2").string();
  pretrain(again, dataset());
  CHECK(slurp(out / "checkpoint.json") == slurp(fs::path(again.out_dir) / "checkpoint.json"));
  CHECK(slurp(out / "checkpoint.bin") == slurp(fs::path(again.out_dir) / "checkpoint.bin"));
  CHECK(slurp(out / "metrics.jsonl") == slurp(fs::path(again.out_dir) / "metrics.jsonl"));
  CHECK(slurp(out / "epochs.csv") == slurp(fs::path(again.out_dir) / "epochs.csv"));
}

TEST_CASE("every mode trains and stop-gradient off reaches the encoder")
{
  for (auto m : {Mode::recon_smc, Mode::cmc_only, Mode::smc_only, Mode::mpm_only, Mode::multitask, Mode::two_tower}) {
    auto cfg = small_run(m);
    cfg.optim.max_steps = 2;
    auto res = pretrain(cfg, dataset());
    INFO(to_string(m));
    CHECK(res.steps.size() == 2);
    for (const auto & s : res.steps) {
      CHECK(std::isfinite(s.report.total));
      CHECK(s.report.total == s.report.rec + s.report.con);
    }
    if (m == Mode::mpm_only) {
      CHECK(res.steps[0].report.con == 0.0);
    }
    if (m == Mode::cmc_only || m == Mode::smc_only) {
      CHECK(res.steps[0].report.rec == 0.0);
    }
  }
  auto cfg = small_run();
  cfg.model.stop_grad = false;
  cfg.optim.max_steps = 2;
  auto res = pretrain(cfg, dataset());
  REQUIRE(res.steps[0].con_encoder_grad_norm.has_value());
  CHECK(*res.steps[0].con_encoder_grad_norm > 0.0);
}

TEST_CASE("teacher dimension mismatch is a configuration error")
{
  auto cfg = small_run();
  cfg.teachers.oracle.dim = 9;
  CHECK(code_of([&] {pretrain(cfg, dataset());}) == Errc::ShapeMismatch);
}

TEST_CASE("fine-tuning protocols")
{
  auto cfg = small_run();
  auto backbone = pretrain(cfg, dataset()).model;
  const auto original = model::parameter_checksum(*backbone);
  CloudStore clouds(dataset());
  auto train = dataset().split_samples("train");
  auto test = dataset().split_samples("test");

  for (auto p : {Protocol::MLP_LINEAR, Protocol::MLP_3}) {
    ProtocolSpec spec;
    spec.protocol = p;
    spec.epochs = 2;
    spec.batch = 4;
    spec.head_hidden = 8;
    auto r = finetune(backbone, spec, clouds, train, test, 3);
    CHECK(r.backbone_checksum_before == r.backbone_checksum_after);
    CHECK(r.train_accuracy >= 0.0);
    CHECK(r.test_accuracy <= 1.0);
  }
  ProtocolSpec full;
  full.epochs = 1;
  full.batch = 4;
  auto r = finetune(backbone, full, clouds, train, test, 3);
  CHECK(r.backbone_checksum_before != r.backbone_checksum_after);
  CHECK(model::parameter_checksum(*backbone) == original);

  full.expect_variant = Variant::Base;
  CHECK(code_of([&] {finetune(backbone, full, clouds, train, test, 3);}) == Errc::VariantMismatch);
  CHECK(protocol_from_string(to_string(Protocol::MLP_3)) == Protocol::MLP_3);
}

TEST_CASE("zero-shot scoring")
{
  std::vector<std::vector<float>> classes{{1, 0}, {0, 1}, {0, 1}};
  std::vector<float> f{0, 2};
  CHECK(argmax_cosine(f, classes) == 1);
  std::vector<std::vector<float>> same{{1, 1}, {1, 1}};
  CHECK(argmax_cosine(f, same) == 0);

  // file-backed text teacher carrying every class name and one prompt
  const auto dir = scratch("zs");
  teach::TeacherEmbedding table(teach::Modality::text, 8);
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (const auto & c : dataset().classes) {
    for (const auto & s : {c, "A 3D model of " + c}) {
      std::vector<float> v(8);
      for (auto & x : v) {x = n(rng);}
      table.add(s, v);
    }
  }
  teach::save_embeddings(dir / "text.rcemb", table);
  auto cfg = small_run();
  cfg.teachers.text_path = (dir / "text.rcemb").string();
  auto res = pretrain(cfg, dataset());
  CloudStore clouds(dataset());
  TeacherBank bank(cfg.teachers, dataset());
  auto samples = dataset().split_samples("test");

  ZeroShotOptions plain;
  plain.ensemble = false;
  auto a = zeroshot(res.model, dataset(), clouds, samples, bank, plain);
  ZeroShotOptions single;
  single.prompts = teach::PromptSet{{""}, {""}};
  auto b = zeroshot(res.model, dataset(), clouds, samples, bank, single);
  CHECK((a.predictions == b.predictions));
  CHECK(a.top1 == b.top1);
  single.aggregation = PromptAggregation::similarity_mean;
  CHECK((zeroshot(res.model, dataset(), clouds, samples, bank, single).predictions == a.predictions));

  ZeroShotOptions missing;
  missing.prompts = teach::PromptSet{{"A photo of "}, {""}};
  CHECK(code_of([&] {zeroshot(res.model, dataset(), clouds, samples, bank, missing);}) == Errc::MissingPrompt);
}

TEST_CASE("few-shot episodes")
{
  auto backbone = pretrain(small_run(), dataset()).model;
  CloudStore clouds(dataset());
  data::EpisodeSpec ep{2, 2, 2, 1, 4};
  ProtocolSpec spec;
  spec.protocol = Protocol::MLP_LINEAR;
  spec.epochs = 2;
  spec.batch = 4;
  auto one = fewshot(backbone, dataset(), clouds, ep, spec);
  CHECK(one.accuracies.size() == 1);
  CHECK(one.std == 0.0);
  ep.runs = 3;
  auto a = fewshot(backbone, dataset(), clouds, ep, spec);
  auto b = fewshot(backbone, dataset(), clouds, ep, spec);
  CHECK(a.mean == b.mean);
  CHECK(a.std == b.std);
  double mean = 0;
  for (double x : a.accuracies) {mean += x / 3;}
  double var = 0;
  for (double x : a.accuracies) {var += (x - mean) * (x - mean) / 3;}
  CHECK(a.mean == doctest::Approx(mean));
  CHECK(a.std == doctest::Approx(std::sqrt(var)));
  ep.ways = 4;
  CHECK(code_of([&] {fewshot(backbone, dataset(), clouds, ep, spec);}) == Errc::InsufficientSamples);
}

TEST_CASE("attention distance analysis")
{
  auto m = model::build_model(small_run().model, 2);
  CloudStore clouds(dataset());
  auto samples = dataset().split_samples("train");
  auto a = analyze_attention(m, clouds, samples, 1);
  auto b = analyze_attention(m, clouds, samples, 1);
  CHECK(a.sizes() == torch::IntArrayRef({2, 2}));
  CHECK(torch::equal(a, b));
  CHECK((a > 0).all().item<bool>());

  const auto path = scratch("attn") / "dist.csv";
  write_attention_csv(path, a);
  std::istringstream csv(slurp(path));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "layer,head,mean_distance");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
  }
  CHECK(rows == 4);
}

TEST_CASE("command line exit codes")
{
  const std::string cli = RECON_CLI_PATH;
  const auto dir = scratch("cli");
  auto run = [&](const std::string & args) {
      const int rc = std::system((cli + " " + args + " >" + (dir / "out.txt").string() + " 2>" +
        (dir / "err.txt").string()).c_str());
      return WEXITSTATUS(rc);
    };
  CHECK(run("gen-data --out " + (dir / "d").string() + " --classes 2 --per-class 4 --points 32") == 0);
  CHECK(run("gen-data --out " + (dir / "e").string() + " --classes 99") != 0);
  CHECK(slurp(dir / "err.txt").find("TooManyClasses") != std::string::npos);
  CHECK(run("pretrain --preset grad --max-steps 2 --data " + (dir / "d" / "manifest.json").string() +
    " --out " + (dir / "r").string()) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "out.txt")).contains("final_train"));
  CHECK(fs::exists(dir / "r" / "checkpoint.json"));
  CHECK(run("pretrain --preset grad --data " + (dir / "missing.json").string()) != 0);
  CHECK(run("pretrain --stop-grad maybe") != 0);
  CHECK(run("attn-dist --checkpoint " + (dir / "r" / "checkpoint.json").string() + " --data " +
    (dir / "d" / "manifest.json").string() + " --out " + (dir / "a.csv").string()) == 0);
  CHECK(fs::exists(dir / "a.csv"));
  CHECK(run("no-such-command") != 0);
}
