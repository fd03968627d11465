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

#include "recon/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "recon/error.hpp"
#include "recon/seed.hpp"

namespace recon::model
{

namespace
{

constexpr double kInitStd = 0.02;

std::vector<double> linear_drop_rates(std::int64_t n, double max_rate)
{
  std::vector<double> rates(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n && n > 1; ++i) {
    rates[i] = max_rate * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return rates;
}

// Standard normal truncated to [-2, 2], scaled to `std`, via the inverse CDF.
void trunc_normal_(torch::Tensor t, double std, at::Generator & gen)
{
  const double lo = std::erf(-2.0 / std::sqrt(2.0));
  const double hi = std::erf(2.0 / std::sqrt(2.0));
  t.uniform_(lo, hi, gen).erfinv_().mul_(std::sqrt(2.0) * std);
}

tok::PatchEmbedOptions embed_options(const ModelConfig & cfg)
{
  tok::PatchEmbedOptions opt;
  opt.width = cfg.hidden;
  opt.point_hidden = cfg.embed_point_hidden;
  opt.point_out = cfg.embed_point_out;
  opt.fuse_hidden = cfg.embed_fuse_hidden;
  return opt;
}

bool starts_with(const std::string & s, const std::string & prefix)
{
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

AttentionImpl::AttentionImpl(std::int64_t dim, std::int64_t heads_, bool qkv_bias, bool cross_)
: heads(heads_), scale(1.0 / std::sqrt(static_cast<double>(dim / heads_))), cross(cross_)
{
  if (cross) {
    q = register_module("q", torch::nn::Linear(torch::nn::LinearOptions(dim, dim).bias(qkv_bias)));
    kv = register_module("kv", torch::nn::Linear(torch::nn::LinearOptions(dim, 2 * dim).bias(qkv_bias)));
  } else {
    qkv = register_module("qkv", torch::nn::Linear(torch::nn::LinearOptions(dim, 3 * dim).bias(qkv_bias)));
  }
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor & x, const torch::Tensor & context)
{
  const auto b = x.size(0);
  const auto tq = x.size(1);
  const auto c = x.size(2);
  const auto hd = c / heads;

  torch::Tensor qh, kh, vh;
  if (cross) {
    check(context.defined(), Errc::ShapeMismatch, "cross-attention needs a context");
    const auto tk = context.size(1);
    qh = q(x).view({b, tq, heads, hd}).permute({0, 2, 1, 3});
    auto kvh = kv(context).view({b, tk, 2, heads, hd}).permute({2, 0, 3, 1, 4});
    kh = kvh[0];
    vh = kvh[1];
  } else {
    auto qkvh = qkv(x).view({b, tq, 3, heads, hd}).permute({2, 0, 3, 1, 4});
    qh = qkvh[0];
    kh = qkvh[1];
    vh = qkvh[2];
  }
  auto attn = torch::softmax(torch::matmul(qh, kh.transpose(-2, -1)) * scale, -1);
  if (capture) {
    last_attention = attn.detach();
  }
  auto out = torch::matmul(attn, vh).permute({0, 2, 1, 3}).reshape({b, tq, c});
  return proj(out);
}

MlpImpl::MlpImpl(std::int64_t dim, std::int64_t hidden)
{
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor & x)
{
  return fc2(torch::gelu(fc1(x)));
}

torch::Tensor drop_path(const torch::Tensor & x, double prob, bool training, at::Generator & gen)
{
  if (!training || prob <= 0.0) {
    return x;
  }
  const double keep = 1.0 - prob;
  std::vector<std::int64_t> shape(static_cast<std::size_t>(x.dim()), 1);
  shape[0] = x.size(0);
  auto mask = torch::empty(shape, x.options()).bernoulli_(keep, gen);
  return x * mask / keep;
}

BlockImpl::BlockImpl(const ModelConfig & cfg, double drop_prob_, at::Generator gen_)
: drop_prob(drop_prob_), gen(std::move(gen_))
{
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden})));
  attn = register_module("attn", Attention(cfg.hidden, cfg.heads, cfg.qkv_bias, false));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden})));
  mlp = register_module("mlp", Mlp(cfg.hidden, cfg.mlp));
}

torch::Tensor BlockImpl::forward(const torch::Tensor & x)
{
  auto y = x + drop_path(attn(norm1(x)), drop_prob, is_training(), gen);
  return y + drop_path(mlp(norm2(y)), drop_prob, is_training(), gen);
}

GlobalBlockImpl::GlobalBlockImpl(const ModelConfig & cfg, double drop_prob_, at::Generator gen_)
: drop_prob(drop_prob_), gen(std::move(gen_))
{
  const torch::nn::LayerNormOptions ln({cfg.hidden});
  if (cfg.decoder_self_attention) {
    self_norm = register_module("self_norm", torch::nn::LayerNorm(ln));
    self_attn = register_module("self_attn", Attention(cfg.hidden, cfg.heads, cfg.qkv_bias, false));
  }
  norm_q = register_module("norm_q", torch::nn::LayerNorm(ln));
  norm_ctx = register_module("norm_ctx", torch::nn::LayerNorm(ln));
  cross_attn = register_module("cross_attn", Attention(cfg.hidden, cfg.heads, cfg.qkv_bias, true));
  norm2 = register_module("norm2", torch::nn::LayerNorm(ln));
  mlp = register_module("mlp", Mlp(cfg.hidden, cfg.mlp));
}

torch::Tensor GlobalBlockImpl::forward(const torch::Tensor & queries, const torch::Tensor & context)
{
  auto x = queries;
  if (self_attn) {
    x = x + drop_path(self_attn(self_norm(x)), drop_prob, is_training(), gen);
  }
  x = x + drop_path(cross_attn(norm_q(x), norm_ctx(context)), drop_prob, is_training(), gen);
  return x + drop_path(mlp(norm2(x)), drop_prob, is_training(), gen);
}

TowerImpl::TowerImpl(const ModelConfig & cfg, at::Generator gen)
{
  patch_embed = register_module("patch_embed", tok::PatchEmbed(embed_options(cfg)));
  pos_embed = register_module("pos_embed", tok::PosEmbed(cfg.hidden, cfg.pos_hidden));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (double rate : linear_drop_rates(cfg.layers, cfg.drop_path)) {
    blocks->push_back(Block(cfg, rate, gen));
  }
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden})));
}

std::vector<torch::Tensor> TowerImpl::encode(torch::Tensor x, bool capture,
  std::vector<torch::Tensor> * attn)
{
  std::vector<torch::Tensor> outputs;
  outputs.reserve(blocks->size());
  for (const auto & m : *blocks) {
    auto & block = *m->as<BlockImpl>();
    block.attn->capture = capture;
    x = block.forward(x);
    outputs.push_back(x);
    if (capture && attn != nullptr) {
      attn->push_back(block.attn->last_attention);
    }
  }
  return outputs;
}

TowerOutput TowerImpl::forward(const tok::TokenBatch & batch, const torch::Tensor & idx, bool capture)
{
  TowerOutput out;
  out.embeddings = patch_embed(batch.groups);
  out.pos = pos_embed(batch.centers);
  auto x = tok::gather_tokens(out.embeddings + out.pos, idx);
  out.layer_outputs = encode(x, capture, &out.attention);
  out.local_tokens = norm(out.layer_outputs.back());
  return out;
}

ReConModelImpl::ReConModelImpl(const ModelConfig & cfg, std::uint64_t seed)
: cfg_(cfg), gen_(at::make_generator<at::CPUGeneratorImpl>(mix_seed({seed, 0xD0})))
{
  validate(cfg_);

  tower = register_module("tower", Tower(cfg_, gen_));
  if (cfg_.arch == Arch::two_tower) {
    contrast_tower = register_module("contrast_tower", Tower(cfg_, gen_));
  }

  if (cfg_.arch == Arch::recon) {
    global_blocks = register_module("global_blocks", torch::nn::ModuleList());
    for (double rate : linear_drop_rates(cfg_.layers, cfg_.drop_path)) {
      global_blocks->push_back(GlobalBlock(cfg_, rate, gen_));
    }
    global_norm = register_module("global_norm",
        torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.hidden})));
    for (auto q : cfg_.queries) {
      query_tokens[q] = register_parameter("query_" + to_string(q), torch::zeros({1, 1, cfg_.hidden}));
    }
  }

  for (auto q : cfg_.queries) {
    if (q != QueryKind::CLS) {
      heads.emplace(q, register_module("head_" + to_string(q), torch::nn::Linear(cfg_.hidden, cfg_.head_dim(q))));
    }
  }

  if (cfg_.reconstruction) {
    mask_token = register_parameter("mask_token", torch::zeros({1, 1, cfg_.hidden}));
    dec_pos = register_module("dec_pos", tok::PosEmbed(cfg_.hidden, cfg_.pos_hidden));
    rec_blocks = register_module("rec_blocks", torch::nn::ModuleList());
    for (double rate : linear_drop_rates(cfg_.rec_decoder_depth, cfg_.drop_path)) {
      rec_blocks->push_back(Block(cfg_, rate, gen_));
    }
    rec_norm = register_module("rec_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.hidden})));
    rec_head = register_module("rec_head", torch::nn::Linear(cfg_.hidden, 3 * cfg_.patch_size));
  }

  init_parameters(*this, seed);
}

void ReConModelImpl::add_query(QueryKind kind, std::uint64_t seed)
{
  check(cfg_.arch == Arch::recon, Errc::BadConfig, "global queries need the recon architecture");
  check(!cfg_.has_query(kind), Errc::BadConfig, "query " + to_string(kind) + " already exists");
  auto dtype = tower->norm->weight.scalar_type();
  auto token = torch::empty({1, 1, cfg_.hidden}, torch::TensorOptions().dtype(dtype));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed({seed, 0xC1}));
  {
    torch::NoGradGuard no_grad;
    trunc_normal_(token, kInitStd, gen);
  }
  query_tokens[kind] = register_parameter("query_" + to_string(kind), token);
  cfg_.queries.push_back(kind);
}

std::map<QueryKind, torch::Tensor> ReConModelImpl::global_decoder_forward(
  const std::vector<torch::Tensor> & encoder_layer_outputs, bool stop_grad, bool capture,
  std::vector<torch::Tensor> * attn)
{
  check(cfg_.arch == Arch::recon, Errc::BadConfig, "model has no global decoder");
  check(static_cast<std::int64_t>(encoder_layer_outputs.size()) == cfg_.layers, Errc::MissingTaps,
    "global decoder needs " + std::to_string(cfg_.layers) + " encoder layer outputs, got " +
    std::to_string(encoder_layer_outputs.size()));
  const auto b = encoder_layer_outputs.front().size(0);

  std::vector<torch::Tensor> tokens;
  for (auto q : cfg_.queries) {
    tokens.push_back(query_tokens.at(q).expand({b, 1, cfg_.hidden}));
  }
  auto x = torch::cat(tokens, 1);

  for (std::size_t l = 0; l < global_blocks->size(); ++l) {
    auto & block = *global_blocks[l]->as<GlobalBlockImpl>();
    block.cross_attn->capture = capture;
    const auto & tap = encoder_layer_outputs[l];
    x = block.forward(x, stop_grad ? tap.detach() : tap);
    if (capture && attn != nullptr) {
      attn->push_back(block.cross_attn->last_attention);
    }
  }
  x = global_norm(x);

  std::map<QueryKind, torch::Tensor> states;
  for (std::size_t i = 0; i < cfg_.queries.size(); ++i) {
    states[cfg_.queries[i]] = x.select(1, static_cast<std::int64_t>(i));
  }
  return states;
}

torch::Tensor ReConModelImpl::rec_decoder_forward(const torch::Tensor & encoded_visible,
  const tok::TokenBatch & batch)
{
  check(cfg_.reconstruction, Errc::BadConfig, "model has no reconstruction decoder");
  const auto b = encoded_visible.size(0);
  const auto m = batch.masked();
  check(encoded_visible.size(1) == batch.visible_idx.size(1), Errc::ShapeMismatch,
    "encoded tokens do not match the visible set");
  const auto s = cfg_.patch_size;
  if (m == 0) {
    return torch::zeros({b, 0, s, 3}, encoded_visible.options());
  }
  check(batch.groups.size(2) == s, Errc::ShapeMismatch, "patch size differs from the model config");

  auto pos_all = dec_pos(batch.centers);
  auto pos = torch::cat({tok::gather_tokens(pos_all, batch.visible_idx),
      tok::gather_tokens(pos_all, batch.masked_idx)}, 1);
  auto x = torch::cat({encoded_visible, mask_token.expand({b, m, cfg_.hidden})}, 1) + pos;
  for (const auto & blk : *rec_blocks) {
    x = blk->as<BlockImpl>()->forward(x);
  }
  x = rec_norm(x.narrow(1, x.size(1) - m, m));
  return rec_head(x).view({b, m, s, 3});
}

ForwardOutput ReConModelImpl::forward(const tok::TokenBatch & batch, const ForwardOptions & opt)
{
  ForwardOutput out;
  const bool stop_grad = opt.stop_grad.value_or(cfg_.stop_grad);

  auto tw = tower->forward(batch, batch.visible_idx, opt.capture_attention);
  out.encoder_layer_outputs = tw.layer_outputs;
  out.local_tokens = tw.local_tokens;
  out.attention_maps = std::move(tw.attention);

  if (cfg_.reconstruction && opt.reconstruct) {
    out.reconstructed = rec_decoder_forward(out.local_tokens, batch);
    out.target = tok::gather_tokens(batch.groups, batch.masked_idx);
  }

  torch::Tensor pooled;
  switch (cfg_.arch) {
    case Arch::recon:
      out.query_states = global_decoder_forward(out.encoder_layer_outputs, stop_grad,
          opt.capture_attention, &out.decoder_attention_maps);
      break;
    case Arch::plain:
      pooled = out.local_tokens.mean(1);
      break;
    case Arch::two_tower: {
      auto all = torch::arange(batch.centers.size(1), torch::kInt64).unsqueeze(0)
        .expand({batch.batch(), batch.centers.size(1)});
      auto ct = contrast_tower->forward(batch, all, false);
      out.contrast_tokens = ct.local_tokens;
      pooled = ct.local_tokens.mean(1);
      break;
    }
  }

  for (auto & [kind, head] : heads) {
    const auto & src = cfg_.arch == Arch::recon ? out.query_states.at(kind) : pooled;
    out.features[kind] = head->forward(src);
  }
  return out;
}

torch::Tensor ReConModelImpl::pooled_features(const ForwardOutput & out) const
{
  std::vector<torch::Tensor> parts{out.local_tokens.mean(1), std::get<0>(out.local_tokens.max(1))};
  if (out.contrast_tokens.defined()) {
    parts.push_back(out.contrast_tokens.mean(1));
    parts.push_back(std::get<0>(out.contrast_tokens.max(1)));
  }
  for (auto q : cfg_.queries) {
    auto it = out.query_states.find(q);
    if (it != out.query_states.end()) {
      parts.push_back(it->second);
    }
  }
  return torch::cat(parts, -1);
}

std::int64_t ReConModelImpl::pooled_feature_dim() const
{
  std::int64_t parts = 2;
  if (cfg_.arch == Arch::two_tower) {
    parts += 2;
  }
  if (cfg_.arch == Arch::recon) {
    parts += static_cast<std::int64_t>(cfg_.queries.size());
  }
  return parts * cfg_.hidden;
}

ReConModel build_model(const ModelConfig & cfg, std::uint64_t seed)
{
  validate(cfg);
  return ReConModel(cfg, seed);
}

void init_parameters(torch::nn::Module & module, std::uint64_t seed)
{
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed({seed, 0x1417}));
  for (auto & item : module.named_parameters()) {
    const auto & name = item.key();
    auto & p = item.value();
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (is_bias) {
      p.zero_();
    } else if (p.dim() == 1) {
      p.fill_(1.0);  // LayerNorm gains
    } else {
      trunc_normal_(p, kInitStd, gen);
    }
  }
}

bool is_pretraining_only(const std::string & name)
{
  return starts_with(name, "mask_token") || starts_with(name, "dec_pos.") ||
         starts_with(name, "rec_blocks.") || starts_with(name, "rec_norm.") ||
         starts_with(name, "rec_head.");
}

std::int64_t count_parameters(const torch::nn::Module & module, ParamScope scope)
{
  std::int64_t total = 0;
  for (const auto & item : module.named_parameters()) {
    if (scope == ParamScope::inference && is_pretraining_only(item.key())) {
      continue;
    }
    total += item.value().numel();
  }
  return total;
}

std::map<std::string, std::vector<std::string>> parameter_groups(const torch::nn::Module & module)
{
  static const std::vector<std::pair<std::string, std::string>> prefixes{
    {"tower.patch_embed.", "patch_embed"},
    {"tower.pos_embed.", "encoder_pos"},
    {"tower.blocks.", "encoder"},
    {"tower.norm.", "encoder_norm"},
    {"contrast_tower.", "contrast_tower"},
    {"global_blocks.", "global_decoder"},
    {"global_norm.", "global_norm"},
    {"query_", "queries"},
    {"head_", "projection_heads"},
    {"mask_token", "mask_token"},
    {"dec_pos.", "decoder_pos"},
    {"rec_blocks.", "rec_decoder"},
    {"rec_norm.", "rec_norm"},
    {"rec_head.", "rec_head"},
  };
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto & item : module.named_parameters()) {
    std::string group = "other";
    for (const auto & [prefix, label] : prefixes) {
      if (starts_with(item.key(), prefix)) {
        group = label;
        break;
      }
    }
    groups[group].push_back(item.key());
  }
  return groups;
}

torch::Tensor attention_distance(const std::vector<torch::Tensor> & attention_maps,
  const torch::Tensor & centers)
{
  check(!attention_maps.empty(), Errc::ShapeMismatch, "no attention maps");
  auto c = centers.to(torch::kFloat64);
  if (c.dim() == 2) {
    c = c.unsqueeze(0);
  }
  auto dist = (c.unsqueeze(2) - c.unsqueeze(1)).pow(2).sum(-1).sqrt();  // B x T x T

  std::vector<torch::Tensor> per_layer;
  for (const auto & layer : attention_maps) {
    auto a = layer.to(torch::kFloat64);
    if (a.dim() == 3) {
      a = a.unsqueeze(0);
    }
    check(a.dim() == 4 && a.size(2) == dist.size(1) && a.size(3) == dist.size(2) &&
      a.size(0) == dist.size(0), Errc::ShapeMismatch, "attention map does not match centers");
    const double dev = (a.sum(-1) - 1.0).abs().max().item<double>();
    check(dev <= 1e-4, Errc::NotNormalized, "attention rows deviate from 1 by " + std::to_string(dev));
    // B x H x Tq
    auto per_query = (a * dist.unsqueeze(1)).sum(-1);
    per_layer.push_back(per_query.mean({0, 2}));
  }
  return torch::stack(per_layer);
}

}  // namespace recon::model
