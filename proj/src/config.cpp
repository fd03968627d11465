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

#include "recon/config.hpp"

#include <algorithm>

#include "recon/error.hpp"

namespace recon
{

bool ModelConfig::has_query(QueryKind q) const
{
  return std::find(queries.begin(), queries.end(), q) != queries.end();
}

std::int64_t ModelConfig::head_dim(QueryKind q) const
{
  switch (q) {
    case QueryKind::IMG: return image_dim;
    case QueryKind::TXT: return text_dim;
    case QueryKind::SELF: return self_dim;
    case QueryKind::CLS: return 0;
  }
  return 0;
}

ModelConfig variant_config(Variant v)
{
  ModelConfig cfg;
  cfg.variant = v;
  switch (v) {
    case Variant::Tiny: cfg.hidden = 192; cfg.mlp = 768; cfg.heads = 3; break;
    case Variant::Small: cfg.hidden = 256; cfg.mlp = 1024; cfg.heads = 4; break;
    case Variant::Base: cfg.hidden = 384; cfg.mlp = 1536; cfg.heads = 6; break;
    case Variant::Custom: break;
  }
  return cfg;
}

void validate(const ModelConfig & cfg)
{
  check(cfg.layers >= 1, Errc::BadConfig, "layers must be positive");
  check(cfg.hidden >= 1 && cfg.heads >= 1, Errc::BadConfig, "hidden and heads must be positive");
  check(cfg.hidden % cfg.heads == 0, Errc::BadConfig,
    "hidden (" + std::to_string(cfg.hidden) + ") must be divisible by heads (" +
    std::to_string(cfg.heads) + ")");
  check(cfg.mlp >= 1, Errc::BadConfig, "mlp width must be positive");
  check(cfg.patch_count >= 1 && cfg.patch_size >= 1, Errc::BadConfig, "patch geometry must be positive");
  check(cfg.mask_ratio >= 0.0 && cfg.mask_ratio < 1.0, Errc::BadConfig, "mask ratio must lie in [0, 1)");
  check(cfg.drop_path >= 0.0 && cfg.drop_path < 1.0, Errc::BadConfig, "drop path must lie in [0, 1)");
  check(!cfg.reconstruction || cfg.rec_decoder_depth >= 1, Errc::BadConfig,
    "reconstruction needs a decoder depth >= 1");
  for (auto q : cfg.queries) {
    check(q == QueryKind::CLS || cfg.head_dim(q) >= 1, Errc::BadConfig,
      "projection head for " + to_string(q) + " needs a positive dim");
  }
  for (std::size_t i = 0; i < cfg.queries.size(); ++i) {
    for (std::size_t j = i + 1; j < cfg.queries.size(); ++j) {
      check(cfg.queries[i] != cfg.queries[j], Errc::BadConfig, "duplicate query kind");
    }
  }
}

std::string to_string(Variant v)
{
  switch (v) {
    case Variant::Tiny: return "Tiny";
    case Variant::Small: return "Small";
    case Variant::Base: return "Base";
    case Variant::Custom: return "Custom";
  }
  return "Custom";
}

std::string to_string(QueryKind q)
{
  switch (q) {
    case QueryKind::IMG: return "IMG";
    case QueryKind::TXT: return "TXT";
    case QueryKind::SELF: return "SELF";
    case QueryKind::CLS: return "CLS";
  }
  return "IMG";
}

std::string to_string(Arch a)
{
  switch (a) {
    case Arch::recon: return "recon";
    case Arch::plain: return "plain";
    case Arch::two_tower: return "two_tower";
  }
  return "recon";
}

Variant variant_from_string(const std::string & s)
{
  if (s == "Tiny") {return Variant::Tiny;}
  if (s == "Small") {return Variant::Small;}
  if (s == "Base") {return Variant::Base;}
  if (s == "Custom") {return Variant::Custom;}
  throw Error(Errc::BadConfig, "unknown variant '" + s + "'");
}

QueryKind query_from_string(const std::string & s)
{
  if (s == "IMG") {return QueryKind::IMG;}
  if (s == "TXT") {return QueryKind::TXT;}
  if (s == "SELF") {return QueryKind::SELF;}
  if (s == "CLS") {return QueryKind::CLS;}
  throw Error(Errc::BadConfig, "unknown query '" + s + "'");
}

Arch arch_from_string(const std::string & s)
{
  if (s == "recon") {return Arch::recon;}
  if (s == "plain") {return Arch::plain;}
  if (s == "two_tower") {return Arch::two_tower;}
  throw Error(Errc::BadConfig, "unknown arch '" + s + "'");
}

void to_json(nlohmann::json & j, const ModelConfig & cfg)
{
  std::vector<std::string> queries;
  for (auto q : cfg.queries) {
    queries.push_back(to_string(q));
  }
  j = nlohmann::json{
    {"variant", to_string(cfg.variant)},
    {"arch", to_string(cfg.arch)},
    {"layers", cfg.layers},
    {"hidden", cfg.hidden},
    {"mlp", cfg.mlp},
    {"heads", cfg.heads},
    {"qkv_bias", cfg.qkv_bias},
    {"patch_count", cfg.patch_count},
    {"patch_size", cfg.patch_size},
    {"mask_ratio", cfg.mask_ratio},
    {"block_mask", cfg.block_mask},
    {"reconstruction", cfg.reconstruction},
    {"rec_decoder_depth", cfg.rec_decoder_depth},
    {"drop_path", cfg.drop_path},
    {"queries", queries},
    {"decoder_self_attention", cfg.decoder_self_attention},
    {"stop_grad", cfg.stop_grad},
    {"embed_point_hidden", cfg.embed_point_hidden},
    {"embed_point_out", cfg.embed_point_out},
    {"embed_fuse_hidden", cfg.embed_fuse_hidden},
    {"pos_hidden", cfg.pos_hidden},
    {"image_dim", cfg.image_dim},
    {"text_dim", cfg.text_dim},
    {"self_dim", cfg.self_dim},
  };
}

void from_json(const nlohmann::json & j, ModelConfig & cfg)
{
  // start from the variant's table values so partial configs stay consistent
  if (j.contains("variant")) {
    cfg = variant_config(variant_from_string(j.at("variant").get<std::string>()));
  }
  auto get = [&j](const char * key, auto & field) {
      if (j.contains(key)) {
        j.at(key).get_to(field);
      }
    };
  if (j.contains("arch")) {
    cfg.arch = arch_from_string(j.at("arch").get<std::string>());
  }
  get("layers", cfg.layers);
  get("hidden", cfg.hidden);
  get("mlp", cfg.mlp);
  get("heads", cfg.heads);
  get("qkv_bias", cfg.qkv_bias);
  get("patch_count", cfg.patch_count);
  get("patch_size", cfg.patch_size);
  get("mask_ratio", cfg.mask_ratio);
  get("block_mask", cfg.block_mask);
  get("reconstruction", cfg.reconstruction);
  get("rec_decoder_depth", cfg.rec_decoder_depth);
  get("drop_path", cfg.drop_path);
  if (j.contains("queries")) {
    cfg.queries.clear();
    for (const auto & q : j.at("queries")) {
      cfg.queries.push_back(query_from_string(q.get<std::string>()));
    }
  }
  get("decoder_self_attention", cfg.decoder_self_attention);
  get("stop_grad", cfg.stop_grad);
  get("embed_point_hidden", cfg.embed_point_hidden);
  get("embed_point_out", cfg.embed_point_out);
  get("embed_fuse_hidden", cfg.embed_fuse_hidden);
  get("pos_hidden", cfg.pos_hidden);
  get("image_dim", cfg.image_dim);
  get("text_dim", cfg.text_dim);
  get("self_dim", cfg.self_dim);
}

}  // namespace recon
