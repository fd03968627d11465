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

#include <json.hpp>

namespace recon
{

enum class Variant {Tiny, Small, Base, Custom};

/// Global query tokens. CLS is only introduced when fine-tuning.
enum class QueryKind {IMG, TXT, SELF, CLS};

/// Network layout. `recon` is the two-stream encoder + global decoder;
/// `plain` is a single encoder whose pooled tokens feed the projection heads;
/// `two_tower` adds an independent second encoder for the contrastive side.
enum class Arch {recon, plain, two_tower};

struct ModelConfig
{
  Variant variant = Variant::Base;
  Arch arch = Arch::recon;
  std::int64_t layers = 12;
  std::int64_t hidden = 384;
  std::int64_t mlp = 1536;
  std::int64_t heads = 6;
  bool qkv_bias = false;

  std::int64_t patch_count = 64;
  std::int64_t patch_size = 32;
  double mask_ratio = 0.6;
  bool block_mask = false;

  bool reconstruction = true;
  std::int64_t rec_decoder_depth = 4;
  double drop_path = 0.1;

  std::vector<QueryKind> queries{QueryKind::IMG, QueryKind::TXT};
  bool decoder_self_attention = false;
  bool stop_grad = true;

  // mini-PointNet and positional MLP widths
  std::int64_t embed_point_hidden = 128;
  std::int64_t embed_point_out = 256;
  std::int64_t embed_fuse_hidden = 512;
  std::int64_t pos_hidden = 128;

  // projection head output dims (teacher embedding dims)
  std::int64_t image_dim = 768;
  std::int64_t text_dim = 512;
  std::int64_t self_dim = 256;

  bool has_query(QueryKind q) const;
  std::int64_t head_dim(QueryKind q) const;
};

/// Table values for the three published variants; other fields keep defaults.
ModelConfig variant_config(Variant v);

/// Throws BadConfig on inconsistent hyperparameters.
void validate(const ModelConfig & cfg);

std::string to_string(Variant v);
std::string to_string(QueryKind q);
std::string to_string(Arch a);
Variant variant_from_string(const std::string & s);
QueryKind query_from_string(const std::string & s);
Arch arch_from_string(const std::string & s);

void to_json(nlohmann::json & j, const ModelConfig & cfg);
void from_json(const nlohmann::json & j, ModelConfig & cfg);

}  // namespace recon
