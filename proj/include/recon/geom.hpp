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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace recon::geom
{

using Vec3 = std::array<float, 3>;

/// Index of the gravity ("up") axis. Rotation augmentation spins about it.
inline constexpr int kUpAxis = 1;

struct PointCloud
{
  std::vector<Vec3> points;
  std::string id;

  std::size_t size() const noexcept {return points.size();}
};

enum class AugmentKind
{
  none,
  rotation,
  scale_translate,
  jitter,
  dropout,
  horizontal_flip,
};

struct AugmentSpec
{
  AugmentKind kind = AugmentKind::none;
  float scale_low = 0.66F;
  float scale_high = 1.5F;
  float translate = 0.2F;
  float jitter_sigma = 0.01F;
  float jitter_clip = 0.05F;
  float dropout_ratio = 0.2F;
  std::uint64_t seed = 0;
};

AugmentKind augment_kind_from_string(const std::string & name);
std::string to_string(AugmentKind kind);

/// Throws NonFinite when any coordinate is NaN or infinite.
void require_finite(const PointCloud & pc);

/// Centers on the centroid and scales so the farthest point has norm 1.
PointCloud normalize_unit_sphere(const PointCloud & pc);

/// Farthest point sampling. The first index is drawn uniformly from `seed`;
/// argmax ties resolve to the lowest index.
std::vector<std::size_t> fps(const PointCloud & pc, std::size_t m, std::uint64_t seed);

struct KnnGroups
{
  /// groups[g][j] is the j-th nearest point index to centers[g].
  std::vector<std::vector<std::size_t>> indices;
  /// relative[g][j] = points[indices[g][j]] - points[centers[g]].
  std::vector<std::vector<Vec3>> relative;
};

/// Exact k-nearest-neighbour grouping; distance ties break by ascending index.
KnnGroups knn_group(const PointCloud & pc, std::span<const std::size_t> centers, std::size_t k);

/// Symmetric l2 Chamfer distance with both directions averaged over their own set.
double chamfer_l2(std::span<const Vec3> a, std::span<const Vec3> b);

PointCloud augment(const PointCloud & pc, const AugmentSpec & spec);

// RCPTS1 binary point-cloud format.
std::vector<std::uint8_t> encode_points(const PointCloud & pc);
PointCloud decode_points(std::span<const std::uint8_t> bytes, std::string id = {});
void write_points(const std::filesystem::path & path, const PointCloud & pc);
PointCloud read_points(const std::filesystem::path & path);

}  // namespace recon::geom
