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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "recon/config.hpp"
#include "recon/tokenizer.hpp"

namespace recon::model
{

/// Multi-head attention. Self-attention projects q/k/v from one input with a
/// fused qkv layer; cross-attention reads keys/values from a context sequence.
class AttentionImpl : public torch::nn::Module
{
public:
  AttentionImpl(std::int64_t dim, std::int64_t heads, bool qkv_bias, bool cross);

  torch::Tensor forward(const torch::Tensor & x, const torch::Tensor & context = {});

  bool capture = false;
  torch::Tensor last_attention;  // B x H x Tq x Tk, detached

  std::int64_t heads;
  double scale;
  bool cross;
  torch::nn::Linear qkv{nullptr}, q{nullptr}, kv{nullptr}, proj{nullptr};
};
TORCH_MODULE(Attention);

class MlpImpl : public torch::nn::Module
{
public:
  MlpImpl(std::int64_t dim, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor & x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

/// Per-sample stochastic depth. Identity in eval mode or when prob == 0.
torch::Tensor drop_path(const torch::Tensor & x, double prob, bool training, at::Generator & gen);

/// Pre-norm transformer block (self-attention + FFN).
class BlockImpl : public torch::nn::Module
{
public:
  BlockImpl(const ModelConfig & cfg, double drop_prob, at::Generator gen);
  torch::Tensor forward(const torch::Tensor & x);

  double drop_prob;
  at::Generator gen;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  Attention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(Block);

/// Global-query block: [query self-attention] -> cross-attention over an
/// encoder layer's output -> FFN.
class GlobalBlockImpl : public torch::nn::Module
{
public:
  GlobalBlockImpl(const ModelConfig & cfg, double drop_prob, at::Generator gen);
  torch::Tensor forward(const torch::Tensor & queries, const torch::Tensor & context);

  double drop_prob;
  at::Generator gen;
  torch::nn::LayerNorm self_norm{nullptr}, norm_q{nullptr}, norm_ctx{nullptr}, norm2{nullptr};
  Attention self_attn{nullptr}, cross_attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(GlobalBlock);

struct TowerOutput
{
  torch::Tensor embeddings;                  // B x G x C patch embeddings
  torch::Tensor pos;                         // B x G x C
  std::vector<torch::Tensor> layer_outputs;  // per layer, B x T x C
  torch::Tensor local_tokens;                // final normed tokens, B x T x C
  std::vector<torch::Tensor> attention;      // per layer, B x H x T x T (when captured)
};

/// Patch embedding + positional MLP + stack of encoder blocks + final norm.
class TowerImpl : public torch::nn::Module
{
public:
  TowerImpl(const ModelConfig & cfg, at::Generator gen);

  /// Runs the encoder over the tokens selected by `idx` (B x T indices into G).
  TowerOutput forward(const tok::TokenBatch & batch, const torch::Tensor & idx, bool capture);

  /// The block stack alone on already-embedded tokens; returns every layer's output.
  std::vector<torch::Tensor> encode(torch::Tensor x, bool capture, std::vector<torch::Tensor> * attn);

  tok::PatchEmbed patch_embed{nullptr};
  tok::PosEmbed pos_embed{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(Tower);

struct ForwardOptions
{
  bool capture_attention = false;
  std::optional<bool> stop_grad;  // defaults to the config value
  bool reconstruct = true;
};

struct ForwardOutput
{
  torch::Tensor reconstructed;  // B x M x S x 3 (undefined without reconstruction or M = 0)
  torch::Tensor target;         // B x M x S x 3 ground-truth masked groups
  std::map<QueryKind, torch::Tensor> features;      // projected, B x D
  std::map<QueryKind, torch::Tensor> query_states;  // normed hidden states, B x C
  std::vector<torch::Tensor> encoder_layer_outputs;
  torch::Tensor local_tokens;     // B x V x C
  torch::Tensor contrast_tokens;  // two-tower only, B x G x C
  std::vector<torch::Tensor> attention_maps;          // encoder, per layer
  std::vector<torch::Tensor> decoder_attention_maps;  // global cross-attention, per layer
};

class ReConModelImpl : public torch::nn::Module
{
public:
  ReConModelImpl(const ModelConfig & cfg, std::uint64_t seed);

  const ModelConfig & config() const noexcept {return cfg_;}

  ForwardOutput forward(const tok::TokenBatch & batch, const ForwardOptions & opt = {});

  /// Query tokens through the global decoder, one cross-attention per encoder layer.
  /// Returns normed query states keyed by kind.
  std::map<QueryKind, torch::Tensor> global_decoder_forward(
    const std::vector<torch::Tensor> & encoder_layer_outputs, bool stop_grad, bool capture,
    std::vector<torch::Tensor> * attn = nullptr);

  /// Masked-token decoder: appends mask tokens, adds positions, predicts S x 3 per masked patch.
  torch::Tensor rec_decoder_forward(const torch::Tensor & encoded_visible, const tok::TokenBatch & batch);

  /// Registers a new learnable global query (used for the fine-tuning CLS token).
  void add_query(QueryKind kind, std::uint64_t seed);

  /// concat(mean-pooled, max-pooled local tokens, query states...) for classification heads.
  torch::Tensor pooled_features(const ForwardOutput & out) const;
  std::int64_t pooled_feature_dim() const;

  at::Generator & generator() {return gen_;}

  Tower tower{nullptr};
  Tower contrast_tower{nullptr};
  torch::nn::ModuleList global_blocks{nullptr};
  torch::nn::LayerNorm global_norm{nullptr};
  std::map<QueryKind, torch::Tensor> query_tokens;
  std::map<QueryKind, torch::nn::Linear> heads;
  torch::Tensor mask_token;
  tok::PosEmbed dec_pos{nullptr};
  torch::nn::ModuleList rec_blocks{nullptr};
  torch::nn::LayerNorm rec_norm{nullptr};
  torch::nn::Linear rec_head{nullptr};

private:
  ModelConfig cfg_;
  at::Generator gen_;
};
TORCH_MODULE(ReConModel);

/// Builds and deterministically initializes a model (truncated-normal weights, zero biases).
ReConModel build_model(const ModelConfig & cfg, std::uint64_t seed);

/// Reinitializes every parameter of `module` from `seed`.
void init_parameters(torch::nn::Module & module, std::uint64_t seed);

enum class ParamScope {all, inference};

/// Parameters used only by the reconstruction pretext (mask token, decoder, head).
bool is_pretraining_only(const std::string & name);

std::int64_t count_parameters(const torch::nn::Module & module, ParamScope scope = ParamScope::all);

/// Groups parameter names by component (patch_embed, encoder, global_decoder, ...).
std::map<std::string, std::vector<std::string>> parameter_groups(const torch::nn::Module & module);

/// Mean attention distance per layer and head: for every query token the
/// attention-weighted distance between patch centers, averaged over queries
/// (and over the batch when maps are 4-D). Result: L x H (float64).
torch::Tensor attention_distance(const std::vector<torch::Tensor> & attention_maps,
  const torch::Tensor & centers);

}  // namespace recon::model
