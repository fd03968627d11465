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

#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "recon/error.hpp"
#include "recon/losses.hpp"
#include "recon/model.hpp"

using namespace recon;
using namespace recon::model;

namespace
{

ModelConfig micro_config()
{
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
  return m;
}

tok::TokenBatch random_batch(const ModelConfig & cfg, int b, double ratio, std::uint64_t seed,
  torch::Dtype dtype = torch::kFloat32)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  std::vector<tok::PatchSet> ps;
  std::vector<tok::MaskSpec> ms;
  for (int i = 0; i < b; ++i) {
    geom::PointCloud pc;
    pc.points.resize(128);
    for (auto & p : pc.points) {
      p = {u(rng), u(rng), u(rng)};
    }
    ps.push_back(tok::patchify(pc, static_cast<std::size_t>(cfg.patch_count),
      static_cast<std::size_t>(cfg.patch_size), seed + static_cast<std::uint64_t>(i)));
    ms.push_back(tok::mask_select(static_cast<std::size_t>(cfg.patch_count), ratio, seed * 31 + static_cast<std::uint64_t>(i)));
  }
  return tok::make_token_batch(ps, ms, dtype);
}

bool all_zero(const torch::Tensor & g)
{
  return !g.defined() || g.abs().max().item<double>() == 0.0;
}

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

}  // namespace

TEST_CASE("variant table and validation")
{
  auto t = variant_config(Variant::Tiny);
  CHECK(t.hidden == 192);
  CHECK(t.mlp == 768);
  CHECK(t.heads == 3);
  auto s = variant_config(Variant::Small);
  CHECK(s.hidden == 256);
  CHECK(s.heads == 4);
  auto b = variant_config(Variant::Base);
  CHECK(b.hidden == 384);
  CHECK(b.mlp == 1536);
  CHECK(b.heads == 6);
  CHECK(b.layers == 12);

  auto bad = micro_config();
  bad.heads = 3;
  CHECK(code_of([&] {build_model(bad, 0);}) == Errc::BadConfig);

  nlohmann::json j = b;
  CHECK(nlohmann::json(j.get<ModelConfig>()) == j);
}

TEST_CASE("parameter counts follow the variant table")
{
  const std::map<Variant, double> published{{Variant::Tiny, 11.4e6}, {Variant::Small, 19.0e6}, {Variant::Base, 43.6e6}};
  for (const auto & [v, want] : published) {
    auto m = build_model(variant_config(v), 0);
    const double got = static_cast<double>(count_parameters(*m, ParamScope::inference));
    INFO(to_string(v) << " " << got);
    CHECK(std::abs(got - want) / want <= 0.10);
    CHECK(count_parameters(*m, ParamScope::all) > count_parameters(*m, ParamScope::inference));
  }
}

TEST_CASE("builds are deterministic under the seed")
{
  auto a = build_model(micro_config(), 5);
  auto b = build_model(micro_config(), 5);
  auto c = build_model(micro_config(), 6);
  auto pa = a->named_parameters();
  auto pb = b->named_parameters();
  auto pc = c->named_parameters();
  bool any_diff = false;
  for (const auto & item : pa) {
    CHECK(torch::equal(item.value(), pb[item.key()]));
    any_diff = any_diff || !torch::equal(item.value(), pc[item.key()]);
    if (item.key().find("bias") != std::string::npos) {
      CHECK(all_zero(item.value()));
    }
  }
  CHECK(any_diff);
}

TEST_CASE("init is truncated normal")
{
  auto m = build_model(variant_config(Variant::Tiny), 1);
  auto w = m->tower->blocks[0]->as<BlockImpl>()->mlp->fc1->weight;
  CHECK(w.abs().max().item<double>() <= 0.04 + 1e-7);
  CHECK(w.std().item<double>() == doctest::Approx(0.0176).epsilon(0.05));  // std of N(0, 0.02) cut at 2 sigma
}

TEST_CASE("single encoder block matches a hand-written oracle")
{
  auto cfg = micro_config();
  Block block(cfg, 0.0, at::make_generator<at::CPUGeneratorImpl>(0));
  init_parameters(*block, 4);
  block->to(torch::kFloat64);
  {
    // non-trivial norm gains and biases so every term is exercised
    torch::NoGradGuard g;
    for (auto & p : block->parameters()) {
      p.add_(torch::randn_like(p) * 0.05);
    }
  }
  block->eval();
  auto x = torch::randn({1, 5, cfg.hidden}, torch::kFloat64);
  auto got = oracle::to_mat(block->forward(x)[0]);

  auto W = [](const torch::Tensor & t) {return oracle::to_mat(t.dim() == 1 ? t.unsqueeze(0) : t);};
  auto linear = [](const oracle::Mat & w, const std::vector<double> & b, const std::vector<double> & v) {
      std::vector<double> out(w.size());
      for (std::size_t o = 0; o < w.size(); ++o) {
        out[o] = b.empty() ? 0.0 : b[o];
        for (std::size_t i = 0; i < v.size(); ++i) {
          out[o] += w[o][i] * v[i];
        }
      }
      return out;
    };
  auto layer_norm = [](const std::vector<double> & v, const std::vector<double> & gamma, const std::vector<double> & beta) {
      double mean = 0;
      for (double a : v) {mean += a;}
      mean /= static_cast<double>(v.size());
      double var = 0;
      for (double a : v) {var += (a - mean) * (a - mean);}
      var /= static_cast<double>(v.size());
      std::vector<double> out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = (v[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
      }
      return out;
    };
  auto& B = *block;
  const auto n1g = W(B.norm1->weight)[0];
  const auto n1b = W(B.norm1->bias)[0];
  const auto n2g = W(B.norm2->weight)[0];
  const auto n2b = W(B.norm2->bias)[0];
  const auto qkv = W(B.attn->qkv->weight);
  const auto proj = W(B.attn->proj->weight);
  const auto projb = W(B.attn->proj->bias)[0];
  const auto fc1 = W(B.mlp->fc1->weight);
  const auto fc1b = W(B.mlp->fc1->bias)[0];
  const auto fc2 = W(B.mlp->fc2->weight);
  const auto fc2b = W(B.mlp->fc2->bias)[0];

  const auto xs = oracle::to_mat(x[0]);
  const std::size_t T = xs.size();
  const std::size_t C = static_cast<std::size_t>(cfg.hidden);
  const std::size_t H = static_cast<std::size_t>(cfg.heads);
  const std::size_t hd = C / H;
  std::vector<std::vector<double>> q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto all = linear(qkv, {}, layer_norm(xs[t], n1g, n1b));
    q[t].assign(all.begin(), all.begin() + static_cast<long>(C));
    k[t].assign(all.begin() + static_cast<long>(C), all.begin() + static_cast<long>(2 * C));
    v[t].assign(all.begin() + static_cast<long>(2 * C), all.end());
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> mixed(C, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      std::vector<double> s(T);
      double mx = -1e300;
      for (std::size_t j = 0; j < T; ++j) {
        s[j] = 0;
        for (std::size_t d = 0; d < hd; ++d) {
          s[j] += q[t][h * hd + d] * k[j][h * hd + d];
        }
        s[j] /= std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto & e : s) {
        e = std::exp(e - mx);
        z += e;
      }
      for (std::size_t j = 0; j < T; ++j) {
        for (std::size_t d = 0; d < hd; ++d) {
          mixed[h * hd + d] += s[j] / z * v[j][h * hd + d];
        }
      }
    }
    auto y = linear(proj, projb, mixed);
    for (std::size_t c = 0; c < C; ++c) {
      y[c] += xs[t][c];
    }
    auto hidden = linear(fc1, fc1b, layer_norm(y, n2g, n2b));
    for (auto & a : hidden) {
      a = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
    }
    auto out = linear(fc2, fc2b, hidden);
    for (std::size_t c = 0; c < C; ++c) {
      CHECK(std::abs(out[c] + y[c] - got[t][c]) <= 1e-10);
    }
  }
}

TEST_CASE("cross-attention with uniform weights averages the value projections")
{
  Attention ca(16, 2, false, true);
  init_parameters(*ca, 3);
  {
    torch::NoGradGuard g;
    ca->q->weight.zero_();  // all scores equal
  }
  ca->capture = true;
  auto query = torch::randn({2, 1, 16});
  auto ctx = torch::randn({2, 6, 16});
  auto out = ca->forward(query, ctx);
  auto values = ca->kv(ctx).slice(-1, 16, 32);
  auto want = ca->proj(values.mean(1, true));
  CHECK(torch::allclose(out, want, 1e-5, 1e-6));
  CHECK(torch::allclose(ca->last_attention, torch::full({2, 2, 1, 6}, 1.0 / 6.0), 0, 1e-7));
}

TEST_CASE("forward shapes, attention rows and eval determinism")
{
  auto cfg = micro_config();
  cfg.queries = {QueryKind::IMG, QueryKind::TXT};
  auto m = build_model(cfg, 1);
  m->eval();
  auto batch = random_batch(cfg, 3, 0.6, 2);
  ForwardOptions opt;
  opt.capture_attention = true;
  auto out = m->forward(batch, opt);
  CHECK(out.reconstructed.sizes() == torch::IntArrayRef({3, 5, 4, 3}));
  CHECK(out.target.sizes() == out.reconstructed.sizes());
  CHECK(out.features.at(QueryKind::IMG).sizes() == torch::IntArrayRef({3, 8}));
  CHECK(out.encoder_layer_outputs.size() == 2);
  REQUIRE(out.attention_maps.size() == 2);
  for (const auto & a : out.attention_maps) {
    CHECK((a.sum(-1) - 1.0).abs().max().item<double>() <= 1e-5);
  }
  for (const auto & a : out.decoder_attention_maps) {
    CHECK((a.sum(-1) - 1.0).abs().max().item<double>() <= 1e-5);
  }
  auto again = m->forward(batch, opt);
  CHECK(torch::equal(again.reconstructed, out.reconstructed));
  CHECK(torch::equal(again.features.at(QueryKind::TXT), out.features.at(QueryKind::TXT)));

  // a repeated sample produces identical rows
  tok::TokenBatch twin = batch;
  auto first = torch::tensor({0, 0});
  twin.centers = batch.centers.index_select(0, first);
  twin.groups = batch.groups.index_select(0, first);
  twin.visible_idx = batch.visible_idx.index_select(0, first);
  twin.masked_idx = batch.masked_idx.index_select(0, first);
  twin.masks = {batch.masks[0], batch.masks[0]};
  auto tw = m->forward(twin);
  CHECK(torch::equal(tw.features.at(QueryKind::IMG)[0], tw.features.at(QueryKind::IMG)[1]));
  CHECK(torch::equal(tw.reconstructed[0], tw.reconstructed[1]));
}

TEST_CASE("reconstruction decoder at the published patch configuration")
{
  auto cfg = micro_config();
  cfg.patch_count = 64;
  cfg.patch_size = 32;
  cfg.rec_decoder_depth = 4;
  auto m = build_model(cfg, 0);
  m->eval();
  auto batch = random_batch(cfg, 1, 0.6, 1);
  auto out = m->forward(batch);
  CHECK(out.reconstructed.sizes() == torch::IntArrayRef({1, 38, 32, 3}));

  auto none = random_batch(cfg, 1, 0.0, 1);
  auto o0 = m->forward(none);
  CHECK(o0.reconstructed.size(1) == 0);
  CHECK(loss::mpm_loss(o0.reconstructed, o0.target).item<double>() == 0.0);
}

TEST_CASE("global decoder needs every encoder tap")
{
  auto m = build_model(micro_config(), 0);
  auto batch = random_batch(micro_config(), 2, 0.5, 3);
  auto out = m->forward(batch);
  std::vector<torch::Tensor> partial{out.encoder_layer_outputs[0]};
  CHECK(code_of([&] {m->global_decoder_forward(partial, true, false);}) == Errc::MissingTaps);
}

TEST_CASE("stop-gradient contract")
{
  auto cfg = micro_config();
  auto groups = parameter_groups(*build_model(cfg, 0));
  const std::vector<std::string> local{"patch_embed", "encoder_pos", "encoder", "encoder_norm",
    "mask_token", "decoder_pos", "rec_decoder", "rec_norm", "rec_head"};
  const std::vector<std::string> global{"global_decoder", "global_norm", "queries", "projection_heads"};

  for (bool stop : {true, false}) {
    cfg.stop_grad = stop;
    auto m = build_model(cfg, 2);
    m->train();
    auto batch = random_batch(cfg, 4, 0.6, 4);
    auto out = m->forward(batch);
    auto con = loss::smooth_l1_con_loss(out.features.at(QueryKind::IMG), torch::randn({4, 8})) +
      loss::smooth_l1_con_loss(out.features.at(QueryKind::TXT), torch::randn({4, 8}));
    m->zero_grad();
    con.backward();
    auto named = m->named_parameters();
    bool any_local = false;
    for (const auto & g : local) {
      for (const auto & name : groups.at(g)) {
        const bool zero = all_zero(named[name].grad());
        if (stop) {
          INFO(name);
          CHECK(zero);
        }
        any_local = any_local || !zero;
      }
    }
    CHECK(any_local == !stop);
  }

  // the reconstruction path never reaches the global stream
  auto m = build_model(cfg, 3);
  auto out = m->forward(random_batch(cfg, 3, 0.6, 5));
  m->zero_grad();
  loss::mpm_loss(out.reconstructed, out.target).backward();
  auto named = m->named_parameters();
  for (const auto & g : global) {
    for (const auto & name : groups.at(g)) {
      CHECK(all_zero(named[name].grad()));
    }
  }
}

TEST_CASE("reconstruction head gradient matches central differences")
{
  auto cfg = micro_config();
  auto m = build_model(cfg, 7);
  m->to(torch::kFloat64);
  m->eval();
  auto batch = random_batch(cfg, 2, 0.5, 6, torch::kFloat64);
  auto eval = [&] {
      auto out = m->forward(batch);
      auto d = (out.reconstructed.reshape({-1, 4, 1, 3}) - out.target.reshape({-1, 1, 4, 3})).pow(2).sum(-1);
      return gradcheck::Evaluation{loss::mpm_loss(out.reconstructed, out.target),
        torch::cat({d.argmin(2).flatten(), d.argmin(1).flatten()})};
    };
  std::vector<torch::Tensor> params{m->rec_head->weight, m->rec_head->bias};
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto r = gradcheck::check_direction(eval, params, s, 1e-5, 1e-12);
    REQUIRE(r.tie_free);
    CHECK(r.rel <= 1e-6);
  }
}

TEST_CASE("attention distance oracles")
{
  auto centers = torch::randn({2, 5, 3});
  auto eye = torch::eye(5).expand({2, 3, 5, 5});
  auto d0 = attention_distance({eye}, centers);
  CHECK(d0.sizes() == torch::IntArrayRef({1, 3}));
  CHECK(d0.abs().max().item<double>() == 0.0);

  auto uniform = torch::full({2, 3, 5, 5}, 0.2);
  auto du = attention_distance({uniform, uniform}, centers);
  double want = 0.0;
  auto c = centers.to(torch::kFloat64);
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        want += (c[b][i] - c[b][j]).norm().item<double>();
      }
    }
  }
  want /= 2.0 * 25.0;
  CHECK(du.sizes() == torch::IntArrayRef({2, 3}));
  CHECK((du - want).abs().max().item<double>() <= 1e-6);

  auto two = torch::tensor({{0.0, 0.0, 0.0}, {3.0, 4.0, 0.0}});
  auto a = torch::tensor({{0.0, 1.0}, {1.0, 0.0}}).reshape({1, 1, 2, 2});
  CHECK(attention_distance({a}, two).item<double>() == doctest::Approx(5.0));

  auto bad = uniform.clone();
  bad[0][0][0][0] = 0.5;
  CHECK(code_of([&] {attention_distance({bad}, centers);}) == Errc::NotNormalized);
}

TEST_CASE("CLS query registration and pooled width")
{
  auto cfg = micro_config();
  auto m = build_model(cfg, 0);
  const auto before = m->pooled_feature_dim();
  m->add_query(QueryKind::CLS, 1);
  CHECK(m->pooled_feature_dim() == before + cfg.hidden);
  auto out = m->forward(random_batch(cfg, 2, 0.0, 1));
  CHECK(m->pooled_features(out).size(1) == m->pooled_feature_dim());
  CHECK(code_of([&] {m->add_query(QueryKind::CLS, 1);}) == Errc::BadConfig);
}
