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

#include "recon/error.hpp"
#include "recon/harness.hpp"
#include "recon/seed.hpp"

namespace recon::harness
{

CloudStore::CloudStore(const data::DatasetManifest & manifest)
{
  for (const auto & s : manifest.samples) {
    auto pc = data::load_cloud(manifest, s);
    pc.id = s.id;
    clouds_.emplace(s.id, std::move(pc));
  }
}

const geom::PointCloud & CloudStore::at(const std::string & id) const
{
  auto it = clouds_.find(id);
  check(it != clouds_.end(), Errc::BadSpec, "no point cloud loaded for sample '" + id + "'");
  return it->second;
}

tok::TokenBatch make_batch(const CloudStore & clouds, const ModelConfig & cfg,
  std::span<const data::Sample * const> samples, double mask_ratio, const geom::AugmentSpec & augment,
  std::uint64_t seed, torch::Dtype dtype)
{
  check(!samples.empty(), Errc::EmptySet, "empty batch");
  const auto g = static_cast<std::size_t>(cfg.patch_count);
  const auto k = static_cast<std::size_t>(cfg.patch_size);
  std::vector<tok::PatchSet> patches;
  std::vector<tok::MaskSpec> masks;
  patches.reserve(samples.size());
  masks.reserve(samples.size());
  for (const auto * s : samples) {
    const auto sample_seed = mix_seed({seed, fnv1a(s->id)});
    const auto & raw = clouds.at(s->id);
    geom::PointCloud pc = raw;
    if (augment.kind != geom::AugmentKind::none) {
      auto spec = augment;
      spec.seed = mix_seed({sample_seed, 1});
      pc = geom::augment(raw, spec);
    }
    auto p = tok::patchify(pc, g, k, mix_seed({sample_seed, 2}));
    const auto mask_seed = mix_seed({sample_seed, 3});
    masks.push_back(cfg.block_mask ? tok::mask_select_block(p.centers, mask_ratio, mask_seed) :
      tok::mask_select(g, mask_ratio, mask_seed));
    patches.push_back(std::move(p));
  }
  return tok::make_token_batch(patches, masks, dtype);
}

TeacherBank::TeacherBank(const TeacherConfig & cfg, const data::DatasetManifest & manifest)
: cfg_(cfg)
{
  cfg_.oracle.classes = std::max<std::uint32_t>(cfg_.oracle.classes,
      static_cast<std::uint32_t>(manifest.classes.size()));
  const auto & source = cfg.unpaired ? data::unpair_images(manifest, mix_seed({cfg.oracle.seed, 0x0A1})) :
    manifest;
  for (const auto & s : source.samples) {
    image_id_[s.id] = s.image_emb_id;
  }
  if (!cfg.image_path.empty()) {
    image_table_ = teach::load_embeddings(cfg.image_path, teach::Modality::image);
    for (const auto & [sid, eid] : image_id_) {
      check(image_table_->contains(eid), Errc::MissingTeacher,
        "image teacher has no record '" + eid + "' for sample '" + sid + "'");
    }
  }
  if (!cfg.text_path.empty()) {
    text_table_ = teach::load_embeddings(cfg.text_path, teach::Modality::text);
  }
}

std::uint32_t TeacherBank::image_dim() const
{
  return image_table_ ? image_table_->dim() : cfg_.oracle.dim;
}

std::uint32_t TeacherBank::text_dim() const
{
  return text_table_ ? text_table_->dim() : cfg_.oracle.dim;
}

namespace
{

torch::Tensor stack_rows(const std::vector<std::vector<float>> & rows, std::uint32_t dim)
{
  auto t = torch::empty({static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(dim)});
  auto acc = t.accessor<float, 2>();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i].size() == dim, Errc::ShapeMismatch, "teacher row width mismatch");
    for (std::uint32_t d = 0; d < dim; ++d) {
      acc[static_cast<std::int64_t>(i)][d] = rows[i][d];
    }
  }
  return t;
}

}  // namespace

torch::Tensor TeacherBank::image(std::span<const data::Sample * const> samples) const
{
  std::vector<std::vector<float>> rows;
  rows.reserve(samples.size());
  for (const auto * s : samples) {
    auto it = image_id_.find(s->id);
    check(it != image_id_.end(), Errc::MissingTeacher, "sample '" + s->id + "' is not in the manifest");
    if (image_table_) {
      auto v = image_table_->lookup(it->second);
      rows.emplace_back(v.begin(), v.end());
    } else {
      rows.push_back(teach::oracle_teacher(cfg_.oracle, static_cast<std::uint32_t>(s->class_id),
        fnv1a(it->second)));
    }
  }
  return stack_rows(rows, image_dim());
}

torch::Tensor TeacherBank::text(std::span<const data::Sample * const> samples) const
{
  std::vector<std::vector<float>> rows;
  rows.reserve(samples.size());
  for (const auto * s : samples) {
    if (text_table_) {
      const auto & key = s->text.empty() ? s->class_name : s->text;
      rows.push_back(teach::text_class_embedding(*text_table_, key, teach::PromptSet{}));
    } else {
      rows.push_back(teach::class_anchor(cfg_.oracle, static_cast<std::uint32_t>(s->class_id)));
    }
  }
  return stack_rows(rows, text_dim());
}

std::vector<float> TeacherBank::class_text(std::int64_t class_id, const std::string & class_name,
  const teach::PromptSet & prompts) const
{
  if (text_table_) {
    return teach::text_class_embedding(*text_table_, class_name, prompts);
  }
  return teach::text_class_embedding(cfg_.oracle, static_cast<std::uint32_t>(class_id));
}

std::vector<std::vector<float>> TeacherBank::prompt_embeddings(std::int64_t class_id,
  const std::string & class_name, const teach::PromptSet & prompts) const
{
  if (!text_table_) {
    return {teach::class_anchor(cfg_.oracle, static_cast<std::uint32_t>(class_id))};
  }
  std::vector<std::vector<float>> out;
  for (const auto & p : teach::compose_prompts(class_name, prompts)) {
    out.push_back(teach::text_class_embedding(*text_table_, p, teach::PromptSet{}));
  }
  return out;
}

}  // namespace recon::harness
