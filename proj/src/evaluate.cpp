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

#include "recon/error.hpp"
#include "recon/harness.hpp"
#include "recon/seed.hpp"

namespace recon::harness
{

Protocol protocol_from_string(const std::string & s)
{
  if (s == "FULL" || s == "full") {return Protocol::FULL;}
  if (s == "MLP_LINEAR" || s == "mlp_linear") {return Protocol::MLP_LINEAR;}
  if (s == "MLP_3" || s == "mlp_3") {return Protocol::MLP_3;}
  throw Error(Errc::BadConfig, "unknown protocol '" + s + "'");
}

std::string to_string(Protocol p)
{
  switch (p) {
    case Protocol::FULL: return "FULL";
    case Protocol::MLP_LINEAR: return "MLP_LINEAR";
    case Protocol::MLP_3: return "MLP_3";
  }
  return "FULL";
}

namespace
{

torch::nn::Sequential make_head(Protocol p, std::int64_t in, std::int64_t hidden, std::int64_t classes)
{
  torch::nn::Sequential head;
  if (p == Protocol::MLP_LINEAR) {
    head->push_back(torch::nn::Linear(in, classes));
    return head;
  }
  head->push_back(torch::nn::Linear(in, hidden));
  head->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({hidden})));
  head->push_back(torch::nn::ReLU());
  head->push_back(torch::nn::Linear(hidden, hidden));
  head->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({hidden})));
  head->push_back(torch::nn::ReLU());
  head->push_back(torch::nn::Linear(hidden, classes));
  return head;
}

torch::Dtype model_dtype(model::ReConModel & m)
{
  return m->tower->norm->weight.scalar_type();
}

torch::Tensor backbone_features(model::ReConModel & m, const CloudStore & clouds,
  std::span<const data::Sample * const> chunk, const geom::AugmentSpec & augment, std::uint64_t seed,
  bool stop_grad)
{
  auto batch = make_batch(clouds, m->config(), chunk, 0.0, augment, seed, model_dtype(m));
  model::ForwardOptions opt;
  opt.stop_grad = stop_grad;
  opt.reconstruct = false;
  auto out = m->forward(batch, opt);
  return m->pooled_features(out);
}

}  // namespace

FinetuneReport finetune(model::ReConModel & backbone, const ProtocolSpec & spec, const CloudStore & clouds,
  std::span<const data::Sample * const> train, std::span<const data::Sample * const> test,
  std::int64_t num_classes, const std::map<std::int64_t, std::int64_t> & label_of)
{
  if (spec.expect_variant) {
    check(backbone->config().variant == *spec.expect_variant, Errc::VariantMismatch,
      "checkpoint variant " + to_string(backbone->config().variant) + " does not match expected " +
      to_string(*spec.expect_variant));
  }
  check(!train.empty(), Errc::EmptySet, "no training samples");
  check(num_classes >= 2, Errc::BadConfig, "need at least two classes");
  check(spec.epochs > 0 && spec.batch > 0, Errc::BadConfig, "epochs and batch must be positive");

  auto label = [&](const data::Sample * s) {
      if (label_of.empty()) {
        return s->class_id;
      }
      auto it = label_of.find(s->class_id);
      check(it != label_of.end(), Errc::BadClass, "class " + std::to_string(s->class_id) + " has no label");
      return it->second;
    };

  const bool full = spec.protocol == Protocol::FULL;
  auto model = clone_model(backbone);
  if (full && model->config().arch == Arch::recon && !model->config().has_query(QueryKind::CLS)) {
    model->add_query(QueryKind::CLS, mix_seed({spec.seed, 0xC15}));
  }
  const auto dtype = model_dtype(model);
  auto head = make_head(spec.protocol, model->pooled_feature_dim(), spec.head_hidden, num_classes);
  model::init_parameters(*head, mix_seed({spec.seed, 0x4EAD}));
  head->to(dtype);

  FinetuneReport report;
  report.backbone_checksum_before = parameter_checksum(*model);

  std::vector<torch::Tensor> params = head->parameters();
  if (full) {
    for (auto & p : model->parameters()) {
      params.push_back(p);
    }
  } else {
    for (auto & p : model->parameters()) {
      p.set_requires_grad(false);
    }
  }
  torch::optim::AdamW optim(params,
    torch::optim::AdamWOptions(spec.lr).betas({0.9, 0.999}).eps(1e-8).weight_decay(spec.weight_decay));

  const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(spec.batch), train.size());
  const auto steps_per_epoch = static_cast<std::int64_t>((train.size() + batch_size - 1) / batch_size);
  const auto total_steps = spec.epochs * steps_per_epoch;
  const auto warmup_steps = std::min(spec.warmup_epochs * steps_per_epoch, total_steps - 1);

  std::vector<const data::Sample *> order(train.begin(), train.end());
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed({spec.seed, 0xF17E, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++step) {
      std::span<const data::Sample * const> chunk(order.data() + start,
        std::min(batch_size, order.size() - start));
      const double lr = lr_schedule(step, total_steps, warmup_steps, spec.lr, 1e-6);
      for (auto & g : optim.param_groups()) {
        static_cast<torch::optim::AdamWOptions &>(g.options()).lr(lr);
      }
      const auto seed = mix_seed({spec.seed, 0xF1B, static_cast<std::uint64_t>(step)});
      torch::Tensor feats;
      if (full) {
        model->train();
        feats = backbone_features(model, clouds, chunk, spec.augment, seed, false);
      } else {
        torch::NoGradGuard no_grad;
        model->eval();
        feats = backbone_features(model, clouds, chunk, spec.augment, seed, true);
      }
      head->train();
      std::vector<std::int64_t> labels;
      for (const auto * s : chunk) {
        labels.push_back(label(s));
      }
      auto target = torch::tensor(labels, torch::kInt64);
      auto loss = torch::nn::functional::cross_entropy(head->forward(feats), target);
      optim.zero_grad();
      loss.backward();
      optim.step();
    }
  }
  report.backbone_checksum_after = parameter_checksum(*model);

  torch::NoGradGuard no_grad;
  model->eval();
  head->eval();
  auto accuracy = [&](std::span<const data::Sample * const> set) {
      if (set.empty()) {
        return 0.0;
      }
      std::int64_t correct = 0;
      for (std::size_t start = 0; start < set.size(); start += batch_size) {
        auto chunk = set.subspan(start, std::min(batch_size, set.size() - start));
        auto feats = backbone_features(model, clouds, chunk, geom::AugmentSpec{},
            mix_seed({spec.seed, 0xE1A1}), !full);
        auto pred = head->forward(feats).argmax(-1);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          correct += pred[static_cast<std::int64_t>(i)].item<std::int64_t>() == label(chunk[i]) ? 1 : 0;
        }
      }
      return static_cast<double>(correct) / static_cast<double>(set.size());
    };
  report.train_accuracy = accuracy(train);
  report.test_accuracy = accuracy(test);
  return report;
}

std::int64_t argmax_cosine(std::span<const float> feature, const std::vector<std::vector<float>> & classes)
{
  check(!classes.empty(), Errc::EmptySet, "no class embeddings");
  std::int64_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    check(classes[c].size() == feature.size(), Errc::ShapeMismatch, "class embedding width mismatch");
    double dot = 0.0;
    double nf = 0.0;
    double nc = 0.0;
    for (std::size_t d = 0; d < feature.size(); ++d) {
      dot += static_cast<double>(feature[d]) * classes[c][d];
      nf += static_cast<double>(feature[d]) * feature[d];
      nc += static_cast<double>(classes[c][d]) * classes[c][d];
    }
    const double denom = std::sqrt(nf) * std::sqrt(nc);
    const double score = denom > 0.0 ? dot / denom : 0.0;
    if (score > best_score) {
      best_score = score;
      best = static_cast<std::int64_t>(c);
    }
  }
  return best;
}

ZeroShotReport zeroshot(model::ReConModel & model, const data::DatasetManifest & manifest,
  const CloudStore & clouds, std::span<const data::Sample * const> samples, const TeacherBank & teachers,
  const ZeroShotOptions & opt)
{
  const auto & mcfg = model->config();
  check(mcfg.has_query(QueryKind::IMG) && mcfg.has_query(QueryKind::TXT), Errc::BadConfig,
    "zero-shot needs both IMG and TXT queries");
  check(mcfg.image_dim == mcfg.text_dim, Errc::ShapeMismatch, "IMG and TXT features differ in width");
  check(static_cast<std::uint32_t>(mcfg.text_dim) == teachers.text_dim(), Errc::ShapeMismatch,
    "text teacher width does not match the TXT head");
  check(!samples.empty(), Errc::EmptySet, "no samples to classify");

  const teach::PromptSet prompts = opt.ensemble ? opt.prompts : teach::PromptSet{};
  std::vector<std::vector<float>> class_emb;
  std::vector<std::vector<std::vector<float>>> prompt_emb;
  for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
    const auto cid = static_cast<std::int64_t>(c);
    if (opt.aggregation == PromptAggregation::embedding_mean) {
      class_emb.push_back(teachers.class_text(cid, manifest.classes[c], prompts));
    } else {
      prompt_emb.push_back(teachers.prompt_embeddings(cid, manifest.classes[c], prompts));
    }
  }

  torch::NoGradGuard no_grad;
  model->eval();
  ZeroShotReport report;
  std::int64_t correct = 0;
  constexpr std::size_t kBatch = 16;
  for (std::size_t start = 0; start < samples.size(); start += kBatch) {
    auto chunk = samples.subspan(start, std::min(kBatch, samples.size() - start));
    auto batch = make_batch(clouds, mcfg, chunk, 0.0, geom::AugmentSpec{}, mix_seed({opt.seed, 0x2E40}),
        model_dtype(model));
    model::ForwardOptions fo;
    fo.reconstruct = false;
    auto out = model->forward(batch, fo);
    auto fused = out.features.at(QueryKind::IMG) + out.features.at(QueryKind::TXT);
    fused = torch::nn::functional::normalize(fused, torch::nn::functional::NormalizeFuncOptions().dim(-1))
      .to(torch::kFloat32).contiguous();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      auto row = fused[static_cast<std::int64_t>(i)];
      std::span<const float> f(row.data_ptr<float>(), static_cast<std::size_t>(row.numel()));
      std::int64_t pred = 0;
      if (opt.aggregation == PromptAggregation::embedding_mean) {
        pred = argmax_cosine(f, class_emb);
      } else {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < prompt_emb.size(); ++c) {
          double acc = 0.0;
          for (const auto & e : prompt_emb[c]) {
            double dot = 0.0;
            for (std::size_t d = 0; d < f.size(); ++d) {
              dot += static_cast<double>(f[d]) * e[d];
            }
            acc += dot;
          }
          const double score = acc / static_cast<double>(prompt_emb[c].size());
          if (score > best) {
            best = score;
            pred = static_cast<std::int64_t>(c);
          }
        }
      }
      report.predictions.push_back(pred);
      correct += pred == chunk[i]->class_id ? 1 : 0;
    }
  }
  report.top1 = static_cast<double>(correct) / static_cast<double>(samples.size());
  return report;
}

FewShotReport fewshot(model::ReConModel & backbone, const data::DatasetManifest & manifest,
  const CloudStore & clouds, const data::EpisodeSpec & episodes, const ProtocolSpec & protocol)
{
  check(episodes.runs > 0, Errc::BadConfig, "few-shot needs at least one run");
  FewShotReport report;
  for (std::size_t r = 0; r < episodes.runs; ++r) {
    const auto ep = data::sample_episode(manifest, episodes, r);
    std::map<std::int64_t, std::int64_t> label_of;
    for (std::size_t i = 0; i < ep.classes.size(); ++i) {
      label_of[ep.classes[i]] = static_cast<std::int64_t>(i);
    }
    std::vector<const data::Sample *> support;
    std::vector<const data::Sample *> query;
    for (const auto & id : ep.support) {
      support.push_back(&manifest.sample(id));
    }
    for (const auto & id : ep.query) {
      query.push_back(&manifest.sample(id));
    }
    auto spec = protocol;
    spec.seed = mix_seed({protocol.seed, static_cast<std::uint64_t>(r)});
    auto rep = finetune(backbone, spec, clouds, support, query,
        static_cast<std::int64_t>(ep.classes.size()), label_of);
    report.accuracies.push_back(rep.test_accuracy);
  }
  const double n = static_cast<double>(report.accuracies.size());
  report.mean = std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : report.accuracies) {
    var += (a - report.mean) * (a - report.mean);
  }
  report.std = std::sqrt(var / n);
  return report;
}

torch::Tensor analyze_attention(model::ReConModel & model, const CloudStore & clouds,
  std::span<const data::Sample * const> samples, std::uint64_t seed)
{
  check(!samples.empty(), Errc::EmptySet, "no samples to analyze");
  torch::NoGradGuard no_grad;
  model->eval();
  constexpr std::size_t kBatch = 16;
  torch::Tensor sum;
  for (std::size_t start = 0; start < samples.size(); start += kBatch) {
    auto chunk = samples.subspan(start, std::min(kBatch, samples.size() - start));
    auto batch = make_batch(clouds, model->config(), chunk, 0.0, geom::AugmentSpec{}, seed, model_dtype(model));
    model::ForwardOptions fo;
    fo.capture_attention = true;
    fo.reconstruct = false;
    auto out = model->forward(batch, fo);
    auto d = model::attention_distance(out.attention_maps, batch.centers) * static_cast<double>(chunk.size());
    sum = sum.defined() ? sum + d : d;
  }
  return sum / static_cast<double>(samples.size());
}

void write_attention_csv(const std::filesystem::path & path, const torch::Tensor & distances)
{
  check(distances.dim() == 2, Errc::ShapeMismatch, "attention distances must be layers x heads");
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary);
  check(os.good(), Errc::Io, "cannot write " + path.string());
  auto d = distances.to(torch::kFloat64).contiguous();
  auto acc = d.accessor<double, 2>();
  os << "layer,head,mean_distance\n" << std::setprecision(12);
  for (std::int64_t l = 0; l < d.size(0); ++l) {
    for (std::int64_t h = 0; h < d.size(1); ++h) {
      os << l << ',' << h << ',' << acc[l][h] << '\n';
    }
  }
  check(os.good(), Errc::Io, "failed writing " + path.string());
}

}  // namespace recon::harness
