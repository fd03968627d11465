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
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "recon/geom.hpp"

namespace recon::data
{

enum class ShapeFamily {sphere, cube, cylinder, cone, torus, pyramid, capsule, plane};

inline constexpr std::size_t kShapeFamilyCount = 8;

std::string to_string(ShapeFamily f);
ShapeFamily family_from_index(std::size_t i);

/// Uniform surface samples of one randomized instance of `family`, before
/// normalization. `scale` is the family's characteristic size (sphere radius).
std::vector<geom::Vec3> sample_shape(ShapeFamily family, std::size_t points, double scale,
  std::mt19937_64 & rng);

struct Sample
{
  std::string id;
  std::string class_name;
  std::int64_t class_id = 0;
  std::string pointcloud_path;  // relative to the manifest directory
  std::string image_emb_id;
  std::string text;
};

struct DatasetManifest
{
  std::vector<Sample> samples;
  std::vector<std::string> classes;
  std::map<std::string, std::vector<std::string>> split;  // "train" / "test" -> ids
  std::filesystem::path root;  // directory holding the manifest; not serialized

  const Sample & sample(const std::string & id) const;
  std::vector<const Sample *> split_samples(const std::string & name) const;
};

/// Throws BadSpec when ids repeat, class ids are out of range or splits overlap.
void validate(const DatasetManifest & m);

void to_json(nlohmann::json & j, const Sample & s);
void from_json(const nlohmann::json & j, Sample & s);
void to_json(nlohmann::json & j, const DatasetManifest & m);
void from_json(const nlohmann::json & j, DatasetManifest & m);

DatasetManifest load_manifest(const std::filesystem::path & path);
void save_manifest(const std::filesystem::path & path, const DatasetManifest & m);

/// Loads and returns the (already normalized) cloud of one sample.
geom::PointCloud load_cloud(const DatasetManifest & m, const Sample & s);

/// Generates `classes` shape families with `per_class` instances each, writes
/// RCPTS1 clouds under out_dir/clouds and out_dir/manifest.json, and splits
/// every class 80/20 into train/test.
DatasetManifest gen_synthetic(const std::filesystem::path & out_dir, std::size_t classes,
  std::size_t per_class, std::size_t points_per_cloud, std::uint64_t seed);

/// Permutes image_emb_id within each class (unpaired-data ablation).
DatasetManifest unpair_images(const DatasetManifest & m, std::uint64_t seed);

struct EpisodeSpec
{
  std::size_t ways = 5;
  std::size_t shots = 10;
  std::size_t queries_per_class = 5;
  std::size_t runs = 10;
  std::uint64_t seed = 0;
};

struct Episode
{
  std::vector<std::string> support;
  std::vector<std::string> query;
  std::vector<std::int64_t> classes;  // chosen class ids, in draw order
};

/// Draws `ways` classes without replacement and `shots` + `queries_per_class`
/// distinct samples per class from the whole manifest.
Episode sample_episode(const DatasetManifest & m, const EpisodeSpec & spec, std::size_t run_index);

}  // namespace recon::data
