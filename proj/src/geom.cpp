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

#include "recon/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "recon/binio.hpp"
#include "recon/error.hpp"

namespace recon::geom
{

namespace
{

constexpr std::string_view kPointsMagic = "RCPTS1";

double sq_dist(const Vec3 & a, const Vec3 & b)
{
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
    s += d * d;
  }
  return s;
}

// One-directional term: mean over `from` of the squared distance to the nearest point in `to`.
double nearest_mean(std::span<const Vec3> from, std::span<const Vec3> to)
{
  double total = 0.0;
  for (const auto & p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto & q : to) {
      best = std::min(best, sq_dist(p, q));
    }
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

AugmentKind augment_kind_from_string(const std::string & name)
{
  if (name == "none") {return AugmentKind::none;}
  if (name == "rotation") {return AugmentKind::rotation;}
  if (name == "scale_translate") {return AugmentKind::scale_translate;}
  if (name == "jitter") {return AugmentKind::jitter;}
  if (name == "dropout") {return AugmentKind::dropout;}
  if (name == "horizontal_flip") {return AugmentKind::horizontal_flip;}
  throw Error(Errc::BadSpec, "unknown augmentation '" + name + "'");
}

std::string to_string(AugmentKind kind)
{
  switch (kind) {
    case AugmentKind::none: return "none";
    case AugmentKind::rotation: return "rotation";
    case AugmentKind::scale_translate: return "scale_translate";
    case AugmentKind::jitter: return "jitter";
    case AugmentKind::dropout: return "dropout";
    case AugmentKind::horizontal_flip: return "horizontal_flip";
  }
  return "none";
}

void require_finite(const PointCloud & pc)
{
  for (const auto & p : pc.points) {
    for (float v : p) {
      check(std::isfinite(v), Errc::NonFinite, "point cloud '" + pc.id + "' has a non-finite coordinate");
    }
  }
}

PointCloud normalize_unit_sphere(const PointCloud & pc)
{
  check(!pc.points.empty(), Errc::BadCount, "cannot normalize an empty point cloud");
  require_finite(pc);

  std::array<double, 3> centroid{0.0, 0.0, 0.0};
  for (const auto & p : pc.points) {
    for (int c = 0; c < 3; ++c) {
      centroid[c] += p[c];
    }
  }
  for (auto & c : centroid) {
    c /= static_cast<double>(pc.size());
  }

  std::vector<std::array<double, 3>> centered(pc.size());
  double radius = 0.0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      centered[i][c] = pc.points[i][c] - centroid[c];
      n2 += centered[i][c] * centered[i][c];
    }
    radius = std::max(radius, std::sqrt(n2));
  }

  PointCloud out{std::vector<Vec3>(pc.size()), pc.id};
  const double scale = radius > 0.0 ? 1.0 / radius : 0.0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      out.points[i][c] = static_cast<float>(centered[i][c] * scale);
    }
  }
  return out;
}

std::vector<std::size_t> fps(const PointCloud & pc, std::size_t m, std::uint64_t seed)
{
  const std::size_t n = pc.size();
  check(m >= 1 && m <= n, Errc::BadCount,
    "fps needs 1 <= m <= N (m=" + std::to_string(m) + ", N=" + std::to_string(n) + ")");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::vector<std::size_t> selected;
  selected.reserve(m);
  selected.push_back(pick(rng));

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  while (selected.size() < m) {
    const Vec3 & last = pc.points[selected.back()];
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], sq_dist(pc.points[i], last));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    // With duplicate points every remaining distance can be zero; fall back to
    // the lowest unselected index so picks stay distinct.
    if (best_d <= 0.0) {
      std::vector<bool> used(n, false);
      for (auto s : selected) {
        used[s] = true;
      }
      best = static_cast<std::size_t>(std::find(used.begin(), used.end(), false) - used.begin());
    }
    selected.push_back(best);
    min_d[best] = 0.0;
  }
  return selected;
}

KnnGroups knn_group(const PointCloud & pc, std::span<const std::size_t> centers, std::size_t k)
{
  const std::size_t n = pc.size();
  check(k >= 1 && k <= n, Errc::BadCount,
    "knn needs 1 <= k <= N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");

  KnnGroups out;
  out.indices.reserve(centers.size());
  out.relative.reserve(centers.size());

  std::vector<std::pair<double, std::size_t>> order(n);
  for (auto center : centers) {
    check(center < n, Errc::BadCount, "center index out of range");
    const Vec3 & c = pc.points[center];
    for (std::size_t i = 0; i < n; ++i) {
      order[i] = {sq_dist(pc.points[i], c), i};
    }
    // pair ordering gives (distance, index) so ties resolve to the lower index
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());

    std::vector<std::size_t> idx(k);
    std::vector<Vec3> rel(k);
    for (std::size_t j = 0; j < k; ++j) {
      idx[j] = order[j].second;
      for (int d = 0; d < 3; ++d) {
        rel[j][d] = pc.points[idx[j]][d] - c[d];
      }
    }
    out.indices.push_back(std::move(idx));
    out.relative.push_back(std::move(rel));
  }
  return out;
}

double chamfer_l2(std::span<const Vec3> a, std::span<const Vec3> b)
{
  check(!a.empty() && !b.empty(), Errc::EmptySet, "chamfer distance needs two nonempty sets");
  return nearest_mean(a, b) + nearest_mean(b, a);
}

PointCloud augment(const PointCloud & pc, const AugmentSpec & spec)
{
  PointCloud out = pc;
  std::mt19937_64 rng(spec.seed);

  switch (spec.kind) {
    case AugmentKind::none:
      break;

    case AugmentKind::rotation: {
      std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
      const double angle = angle_dist(rng);
      const double cs = std::cos(angle);
      const double sn = std::sin(angle);
      // rotate the plane orthogonal to the up axis
      const int u = (kUpAxis + 1) % 3;
      const int v = (kUpAxis + 2) % 3;
      for (auto & p : out.points) {
        const double pu = p[u];
        const double pv = p[v];
        p[u] = static_cast<float>(cs * pu - sn * pv);
        p[v] = static_cast<float>(sn * pu + cs * pv);
      }
      break;
    }

    case AugmentKind::scale_translate: {
      check(spec.scale_low < spec.scale_high, Errc::BadSpec, "scale range needs low < high");
      check(spec.translate >= 0.0F, Errc::BadSpec, "translate bound must be nonnegative");
      std::uniform_real_distribution<float> scale_dist(spec.scale_low, spec.scale_high);
      std::uniform_real_distribution<float> shift_dist(-spec.translate, spec.translate);
      std::array<float, 3> scale{};
      std::array<float, 3> shift{};
      for (int c = 0; c < 3; ++c) {
        scale[c] = scale_dist(rng);
      }
      for (int c = 0; c < 3; ++c) {
        shift[c] = spec.translate > 0.0F ? shift_dist(rng) : 0.0F;
      }
      for (auto & p : out.points) {
        for (int c = 0; c < 3; ++c) {
          p[c] = p[c] * scale[c] + shift[c];
        }
      }
      break;
    }

    case AugmentKind::jitter: {
      check(spec.jitter_sigma > 0.0F, Errc::BadSpec, "jitter sigma must be positive");
      check(spec.jitter_clip >= spec.jitter_sigma, Errc::BadSpec, "jitter clip must be >= sigma");
      std::normal_distribution<float> noise(0.0F, spec.jitter_sigma);
      for (auto & p : out.points) {
        for (auto & v : p) {
          v += std::clamp(noise(rng), -spec.jitter_clip, spec.jitter_clip);
        }
      }
      break;
    }

    case AugmentKind::dropout: {
      check(spec.dropout_ratio >= 0.0F && spec.dropout_ratio < 1.0F, Errc::BadSpec,
        "dropout ratio must lie in [0, 1)");
      // dropped points collapse onto the first point so N is preserved
      std::bernoulli_distribution drop(spec.dropout_ratio);
      const Vec3 anchor = out.points.front();
      for (std::size_t i = 1; i < out.points.size(); ++i) {
        if (drop(rng)) {
          out.points[i] = anchor;
        }
      }
      break;
    }

    case AugmentKind::horizontal_flip: {
      std::bernoulli_distribution flip(0.5);
      if (flip(rng)) {
        for (auto & p : out.points) {
          p[0] = -p[0];
        }
      }
      break;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_points(const PointCloud & pc)
{
  std::vector<std::uint8_t> out;
  out.reserve(kPointsMagic.size() + 4 + pc.size() * 12);
  binio::put_bytes(out, kPointsMagic);
  binio::put_u32(out, static_cast<std::uint32_t>(pc.size()));
  for (const auto & p : pc.points) {
    for (float v : p) {
      binio::put_f32(out, v);
    }
  }
  return out;
}

PointCloud decode_points(std::span<const std::uint8_t> bytes, std::string id)
{
  binio::Reader in(bytes);
  check(in.remaining() >= kPointsMagic.size() &&
    in.str(kPointsMagic.size(), "magic") == kPointsMagic, Errc::BadMagic, "not an RCPTS1 payload");
  const std::uint32_t n = in.u32("point count");
  in.need(static_cast<std::size_t>(n) * 12, "point data");

  PointCloud pc{std::vector<Vec3>(n), std::move(id)};
  for (auto & p : pc.points) {
    for (auto & v : p) {
      v = in.f32("point data");
    }
  }
  return pc;
}

void write_points(const std::filesystem::path & path, const PointCloud & pc)
{
  binio::write_file(path, encode_points(pc));
}

PointCloud read_points(const std::filesystem::path & path)
{
  return decode_points(binio::read_file(path), path.stem().string());
}

}  // namespace recon::geom
