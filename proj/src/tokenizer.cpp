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

#include "recon/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "recon/error.hpp"

namespace recon::tok
{

PatchSet patchify(const geom::PointCloud & pc, std::size_t patch_count, std::size_t patch_size,
  std::uint64_t seed)
{
  const auto center_idx = geom::fps(pc, patch_count, seed);
  auto grouped = geom::knn_group(pc, center_idx, patch_size);

  PatchSet out;
  out.source_id = pc.id;
  out.centers.reserve(patch_count);
  for (auto c : center_idx) {
    out.centers.push_back(pc.points[c]);
  }
  out.groups = std::move(grouped.relative);
  return out;
}

std::size_t masked_count(std::size_t patch_count, double ratio)
{
  check(ratio >= 0.0 && ratio < 1.0, Errc::BadRatio, "mask ratio must lie in [0, 1)");
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(patch_count)));
}

namespace
{

MaskSpec split_mask(std::size_t patch_count, double ratio, std::uint64_t seed,
  const std::vector<std::size_t> & masked_first)
{
  const std::size_t m = masked_count(patch_count, ratio);
  MaskSpec spec;
  spec.ratio = ratio;
  spec.seed = seed;
  std::vector<bool> is_masked(patch_count, false);
  for (std::size_t i = 0; i < m; ++i) {
    is_masked[masked_first[i]] = true;
  }
  for (std::size_t g = 0; g < patch_count; ++g) {
    (is_masked[g] ? spec.masked_idx : spec.visible_idx).push_back(static_cast<std::int64_t>(g));
  }
  return spec;
}

}  // namespace

MaskSpec mask_select(std::size_t patch_count, double ratio, std::uint64_t seed)
{
  masked_count(patch_count, ratio);
  std::vector<std::size_t> order(patch_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return split_mask(patch_count, ratio, seed, order);
}

MaskSpec mask_select_block(const std::vector<geom::Vec3> & centers, double ratio, std::uint64_t seed)
{
  const std::size_t g = centers.size();
  masked_count(g, ratio);
  check(g >= 1, Errc::BadCount, "block masking needs at least one token");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, g - 1);
  const geom::PointCloud cloud{centers, {}};
  const std::size_t anchor = pick(rng);
  auto near = geom::knn_group(cloud, std::span<const std::size_t>(&anchor, 1), g);
  return split_mask(g, ratio, seed, near.indices.front());
}

TokenBatch make_token_batch(const std::vector<PatchSet> & patches, const std::vector<MaskSpec> & masks,
  torch::Dtype dtype)
{
  check(!patches.empty() && patches.size() == masks.size(), Errc::ShapeMismatch,
    "token batch needs one mask per patch set");
  const auto b = static_cast<std::int64_t>(patches.size());
  const auto g = static_cast<std::int64_t>(patches.front().patch_count());
  const auto s = static_cast<std::int64_t>(patches.front().patch_size());
  const auto v = static_cast<std::int64_t>(masks.front().visible_idx.size());
  const auto m = static_cast<std::int64_t>(masks.front().masked_idx.size());

  auto centers = torch::empty({b, g, 3}, torch::kFloat32);
  auto groups = torch::empty({b, g, s, 3}, torch::kFloat32);
  auto vis = torch::empty({b, v}, torch::kInt64);
  auto msk = torch::empty({b, m}, torch::kInt64);
  auto c_acc = centers.accessor<float, 3>();
  auto g_acc = groups.accessor<float, 4>();
  auto v_acc = vis.accessor<std::int64_t, 2>();
  auto m_acc = msk.accessor<std::int64_t, 2>();

  TokenBatch out;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto & ps = patches[i];
    const auto & mk = masks[i];
    check(static_cast<std::int64_t>(ps.patch_count()) == g &&
      static_cast<std::int64_t>(ps.patch_size()) == s, Errc::ShapeMismatch,
      "all samples in a batch must share patch count and size");
    check(static_cast<std::int64_t>(mk.visible_idx.size()) == v &&
      static_cast<std::int64_t>(mk.masked_idx.size()) == m &&
      static_cast<std::int64_t>(mk.visible_idx.size() + mk.masked_idx.size()) == g,
      Errc::ShapeMismatch, "mask does not match token count");
    for (std::int64_t t = 0; t < g; ++t) {
      for (int d = 0; d < 3; ++d) {
        c_acc[i][t][d] = ps.centers[t][d];
      }
      for (std::int64_t p = 0; p < s; ++p) {
        for (int d = 0; d < 3; ++d) {
          g_acc[i][t][p][d] = ps.groups[t][p][d];
        }
      }
    }
    for (std::int64_t t = 0; t < v; ++t) {
      v_acc[i][t] = mk.visible_idx[t];
    }
    for (std::int64_t t = 0; t < m; ++t) {
      m_acc[i][t] = mk.masked_idx[t];
    }
    out.ids.push_back(ps.source_id);
  }
  out.centers = centers.to(dtype);
  out.groups = groups.to(dtype);
  out.visible_idx = vis;
  out.masked_idx = msk;
  out.masks = masks;
  return out;
}

torch::Tensor gather_tokens(const torch::Tensor & x, const torch::Tensor & idx)
{
  auto shape = x.sizes().vec();
  std::vector<std::int64_t> view(shape.size(), 1);
  view[0] = idx.size(0);
  view[1] = idx.size(1);
  auto expand = shape;
  expand[1] = idx.size(1);
  return x.gather(1, idx.view(view).expand(expand));
}

PatchEmbedImpl::PatchEmbedImpl(const PatchEmbedOptions & opt)
{
  first1 = register_module("first1", torch::nn::Linear(3, opt.point_hidden));
  norm1 = register_module("norm1", torch::nn::LayerNorm(
      torch::nn::LayerNormOptions({opt.point_hidden})));
  first2 = register_module("first2", torch::nn::Linear(opt.point_hidden, opt.point_out));
  second1 = register_module("second1", torch::nn::Linear(2 * opt.point_out, opt.fuse_hidden));
  norm2 = register_module("norm2", torch::nn::LayerNorm(
      torch::nn::LayerNormOptions({opt.fuse_hidden})));
  second2 = register_module("second2", torch::nn::Linear(opt.fuse_hidden, opt.width));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor & groups)
{
  // groups: [..., S, 3]
  auto f = first2(torch::relu(norm1(first1(groups))));            // [..., S, point_out]
  auto pooled = std::get<0>(f.max(-2, /*keepdim=*/true));          // [..., 1, point_out]
  f = torch::cat({pooled.expand_as(f), f}, -1);                    // [..., S, 2*point_out]
  f = second2(torch::relu(norm2(second1(f))));                     // [..., S, width]
  return std::get<0>(f.max(-2));
}

PosEmbedImpl::PosEmbedImpl(std::int64_t width, std::int64_t hidden)
{
  fc1 = register_module("fc1", torch::nn::Linear(3, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, width));
}

torch::Tensor PosEmbedImpl::forward(const torch::Tensor & centers)
{
  return fc2(torch::gelu(fc1(centers)));
}

}  // namespace recon::tok
