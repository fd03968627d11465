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
#include <string>
#include <vector>

#include <torch/torch.h>

#include "recon/geom.hpp"

namespace recon::tok
{

struct PatchSet
{
  std::vector<geom::Vec3> centers;               // G
  std::vector<std::vector<geom::Vec3>> groups;   // G x S, center-relative
  std::string source_id;

  std::size_t patch_count() const noexcept {return centers.size();}
  std::size_t patch_size() const noexcept {return groups.empty() ? 0 : groups.front().size();}
};

struct MaskSpec
{
  double ratio = 0.0;
  std::vector<std::int64_t> visible_idx;  // ascending
  std::vector<std::int64_t> masked_idx;   // ascending
  std::uint64_t seed = 0;
};

/// FPS centers followed by k-NN grouping.
PatchSet patchify(const geom::PointCloud & pc, std::size_t patch_count, std::size_t patch_size,
  std::uint64_t seed);

/// round(ratio * G) with halves rounded away from zero.
std::size_t masked_count(std::size_t patch_count, double ratio);

/// Uniformly random visible/masked partition of G tokens.
MaskSpec mask_select(std::size_t patch_count, double ratio, std::uint64_t seed);

/// Block masking: a random seed token and its nearest centers are masked together.
MaskSpec mask_select_block(const std::vector<geom::Vec3> & centers, double ratio,
  std::uint64_t seed);

/// Dense tensors for a batch of patchified samples that share G, S and mask counts.
struct TokenBatch
{
  torch::Tensor centers;      // B x G x 3
  torch::Tensor groups;       // B x G x S x 3
  torch::Tensor visible_idx;  // B x V (int64)
  torch::Tensor masked_idx;   // B x M (int64)
  std::vector<MaskSpec> masks;
  std::vector<std::string> ids;

  std::int64_t batch() const {return centers.size(0);}
  std::int64_t masked() const {return masked_idx.size(1);}
};

TokenBatch make_token_batch(const std::vector<PatchSet> & patches, const std::vector<MaskSpec> & masks,
  torch::Dtype dtype = torch::kFloat32);

/// Gathers rows of a B x G x ... tensor along dim 1 with a B x K index tensor.
torch::Tensor gather_tokens(const torch::Tensor & x, const torch::Tensor & idx);

struct PatchEmbedOptions
{
  std::int64_t width = 384;
  std::int64_t point_hidden = 128;   // pointwise MLP 3 -> point_hidden
  std::int64_t point_out = 256;      // -> point_out, then max-pooled
  std::int64_t fuse_hidden = 512;    // concat(pooled, per-point) -> fuse_hidden -> width
};

/// Two-stage mini-PointNet: shared pointwise MLP, max-pool, concat the pooled
/// code back onto each point, second MLP, max-pool to one token per group.
class PatchEmbedImpl : public torch::nn::Module
{
public:
  explicit PatchEmbedImpl(const PatchEmbedOptions & opt);

  /// groups: [..., S, 3] -> [..., width]
  torch::Tensor forward(const torch::Tensor & groups);

  torch::nn::Linear first1{nullptr}, first2{nullptr}, second1{nullptr}, second2{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(PatchEmbed);

/// Learned positional embedding: Linear(3, hidden) -> GELU -> Linear(hidden, width).
class PosEmbedImpl : public torch::nn::Module
{
public:
  PosEmbedImpl(std::int64_t width, std::int64_t hidden);

  torch::Tensor forward(const torch::Tensor & centers);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(PosEmbed);

}  // namespace recon::tok
