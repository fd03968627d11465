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

#include "recon/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "recon/error.hpp"
#include "recon/seed.hpp"

namespace recon::data
{

namespace
{

using Rng = std::mt19937_64;

double uni(Rng & rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

geom::Vec3 vec(double x, double y, double z)
{
  return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

std::array<double, 3> unit_sphere(Rng & rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  while (true) {
    std::array<double, 3> v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-12) {
      return {v[0] / len, v[1] / len, v[2] / len};
    }
  }
}

using Tri = std::array<std::array<double, 3>, 3>;

double tri_area(const Tri & t)
{
  std::array<double, 3> u{}, v{};
  for (int c = 0; c < 3; ++c) {
    u[c] = t[1][c] - t[0][c];
    v[c] = t[2][c] - t[0][c];
  }
  const double x = u[1] * v[2] - u[2] * v[1];
  const double y = u[2] * v[0] - u[0] * v[2];
  const double z = u[0] * v[1] - u[1] * v[0];
  return 0.5 * std::sqrt(x * x + y * y + z * z);
}

geom::Vec3 sample_tri(const Tri & t, Rng & rng)
{
  const double r1 = std::sqrt(uni(rng, 0.0, 1.0));
  const double r2 = uni(rng, 0.0, 1.0);
  const double a = 1.0 - r1;
  const double b = r1 * (1.0 - r2);
  const double c = r1 * r2;
  return vec(a * t[0][0] + b * t[1][0] + c * t[2][0],
             a * t[0][1] + b * t[1][1] + c * t[2][1],
             a * t[0][2] + b * t[1][2] + c * t[2][2]);
}

std::vector<geom::Vec3> sample_mesh(const std::vector<Tri> & tris, std::size_t n, Rng & rng)
{
  std::vector<double> areas;
  for (const auto & t : tris) {
    areas.push_back(tri_area(t));
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(sample_tri(tris[pick(rng)], rng));
  }
  return out;
}

// point on a disk of radius r in the xz plane at height y
geom::Vec3 disk_point(double r, double y, Rng & rng)
{
  const double rho = r * std::sqrt(uni(rng, 0.0, 1.0));
  const double phi = uni(rng, 0.0, 2.0 * std::numbers::pi);
  return vec(rho * std::cos(phi), y, rho * std::sin(phi));
}

std::vector<geom::Vec3> sample_cube(std::size_t n, double scale, Rng & rng)
{
  const double ax = scale * uni(rng, 0.8, 1.2);
  const double ay = scale * uni(rng, 0.8, 1.2);
  const double az = scale * uni(rng, 0.8, 1.2);
  // faces: +-x (area ay*az), +-y (ax*az), +-z (ax*ay)
  std::discrete_distribution<int> face({ay * az, ay * az, ax * az, ax * az, ax * ay, ax * ay});
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int f = face(rng);
    const double sign = (f % 2 == 0) ? 1.0 : -1.0;
    double x = uni(rng, -ax, ax);
    double y = uni(rng, -ay, ay);
    double z = uni(rng, -az, az);
    if (f / 2 == 0) {x = sign * ax;}
    if (f / 2 == 1) {y = sign * ay;}
    if (f / 2 == 2) {z = sign * az;}
    out.push_back(vec(x, y, z));
  }
  return out;
}

std::vector<geom::Vec3> sample_cylinder(std::size_t n, double scale, Rng & rng)
{
  const double r = scale * uni(rng, 0.5, 0.8);
  const double h = scale * uni(rng, 0.8, 1.2);
  const double lateral = 2.0 * std::numbers::pi * r * 2.0 * h;
  const double cap = std::numbers::pi * r * r;
  std::discrete_distribution<int> part({lateral, cap, cap});
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = part(rng);
    if (p == 0) {
      const double phi = uni(rng, 0.0, 2.0 * std::numbers::pi);
      out.push_back(vec(r * std::cos(phi), uni(rng, -h, h), r * std::sin(phi)));
    } else {
      out.push_back(disk_point(r, p == 1 ? h : -h, rng));
    }
  }
  return out;
}

std::vector<geom::Vec3> sample_cone(std::size_t n, double scale, Rng & rng)
{
  const double r = scale * uni(rng, 0.6, 0.9);
  const double height = scale * uni(rng, 1.2, 1.8);
  const double slant = std::sqrt(r * r + height * height);
  std::discrete_distribution<int> part({std::numbers::pi * r * slant, std::numbers::pi * r * r});
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (part(rng) == 0) {
      // fraction of the way from apex to base; sqrt gives area-uniform density
      const double t = std::sqrt(uni(rng, 0.0, 1.0));
      const double phi = uni(rng, 0.0, 2.0 * std::numbers::pi);
      out.push_back(vec(t * r * std::cos(phi), 0.5 * height - t * height, t * r * std::sin(phi)));
    } else {
      out.push_back(disk_point(r, -0.5 * height, rng));
    }
  }
  return out;
}

std::vector<geom::Vec3> sample_torus(std::size_t n, double scale, Rng & rng)
{
  const double major = scale * uni(rng, 0.7, 0.9);
  const double minor = scale * uni(rng, 0.2, 0.35);
  std::vector<geom::Vec3> out;
  out.reserve(n);
  while (out.size() < n) {
    const double theta = uni(rng, 0.0, 2.0 * std::numbers::pi);
    const double phi = uni(rng, 0.0, 2.0 * std::numbers::pi);
    // area element is proportional to (R + r cos theta)
    if (uni(rng, 0.0, 1.0) > (major + minor * std::cos(theta)) / (major + minor)) {
      continue;
    }
    const double ring = major + minor * std::cos(theta);
    out.push_back(vec(ring * std::cos(phi), minor * std::sin(theta), ring * std::sin(phi)));
  }
  return out;
}

std::vector<geom::Vec3> sample_pyramid(std::size_t n, double scale, Rng & rng)
{
  const double a = scale * uni(rng, 0.7, 1.0);
  const double height = scale * uni(rng, 1.0, 1.6);
  const std::array<double, 3> apex{0.0, 0.5 * height, 0.0};
  const double y0 = -0.5 * height;
  const std::array<std::array<double, 3>, 4> base{{{-a, y0, -a}, {a, y0, -a}, {a, y0, a}, {-a, y0, a}}};
  std::vector<Tri> tris;
  for (int i = 0; i < 4; ++i) {
    tris.push_back({apex, base[i], base[(i + 1) % 4]});
  }
  tris.push_back({base[0], base[1], base[2]});
  tris.push_back({base[0], base[2], base[3]});
  return sample_mesh(tris, n, rng);
}

std::vector<geom::Vec3> sample_capsule(std::size_t n, double scale, Rng & rng)
{
  const double r = scale * uni(rng, 0.35, 0.5);
  const double h = scale * uni(rng, 0.6, 0.9);
  std::discrete_distribution<int> part({2.0 * std::numbers::pi * r * 2.0 * h, 4.0 * std::numbers::pi * r * r});
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (part(rng) == 0) {
      const double phi = uni(rng, 0.0, 2.0 * std::numbers::pi);
      out.push_back(vec(r * std::cos(phi), uni(rng, -h, h), r * std::sin(phi)));
    } else {
      auto s = unit_sphere(rng);
      const double y = r * s[1] + (s[1] >= 0.0 ? h : -h);
      out.push_back(vec(r * s[0], y, r * s[2]));
    }
  }
  return out;
}

std::vector<geom::Vec3> sample_plane(std::size_t n, double scale, Rng & rng)
{
  const double ax = scale * uni(rng, 0.8, 1.2);
  const double az = scale * uni(rng, 0.5, 1.0);
  std::vector<geom::Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(vec(uni(rng, -ax, ax), 0.0, uni(rng, -az, az)));
  }
  return out;
}

std::vector<std::string> read_ids(const nlohmann::json & j)
{
  return j.get<std::vector<std::string>>();
}

}  // namespace

std::string to_string(ShapeFamily f)
{
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::cube: return "cube";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::cone: return "cone";
    case ShapeFamily::torus: return "torus";
    case ShapeFamily::pyramid: return "pyramid";
    case ShapeFamily::capsule: return "capsule";
    case ShapeFamily::plane: return "plane";
  }
  return "sphere";
}

ShapeFamily family_from_index(std::size_t i)
{
  check(i < kShapeFamilyCount, Errc::TooManyClasses, "only " + std::to_string(kShapeFamilyCount) +
    " shape families exist");
  return static_cast<ShapeFamily>(i);
}

std::vector<geom::Vec3> sample_shape(ShapeFamily family, std::size_t points, double scale, Rng & rng)
{
  switch (family) {
    case ShapeFamily::sphere: {
      std::vector<geom::Vec3> out;
      out.reserve(points);
      for (std::size_t i = 0; i < points; ++i) {
        auto s = unit_sphere(rng);
        out.push_back(vec(scale * s[0], scale * s[1], scale * s[2]));
      }
      return out;
    }
    case ShapeFamily::cube: return sample_cube(points, scale, rng);
    case ShapeFamily::cylinder: return sample_cylinder(points, scale, rng);
    case ShapeFamily::cone: return sample_cone(points, scale, rng);
    case ShapeFamily::torus: return sample_torus(points, scale, rng);
    case ShapeFamily::pyramid: return sample_pyramid(points, scale, rng);
    case ShapeFamily::capsule: return sample_capsule(points, scale, rng);
    case ShapeFamily::plane: return sample_plane(points, scale, rng);
  }
  return {};
}

const Sample & DatasetManifest::sample(const std::string & id) const
{
  auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample & s) {return s.id == id;});
  check(it != samples.end(), Errc::BadSpec, "unknown sample id '" + id + "'");
  return *it;
}

std::vector<const Sample *> DatasetManifest::split_samples(const std::string & name) const
{
  auto it = split.find(name);
  check(it != split.end(), Errc::BadSpec, "manifest has no '" + name + "' split");
  std::unordered_map<std::string, const Sample *> by_id;
  for (const auto & s : samples) {
    by_id.emplace(s.id, &s);
  }
  std::vector<const Sample *> out;
  for (const auto & id : it->second) {
    auto f = by_id.find(id);
    check(f != by_id.end(), Errc::BadSpec, "split references unknown id '" + id + "'");
    out.push_back(f->second);
  }
  return out;
}

void validate(const DatasetManifest & m)
{
  std::unordered_set<std::string> ids;
  for (const auto & s : m.samples) {
    check(ids.insert(s.id).second, Errc::DuplicateId, "duplicate sample id '" + s.id + "'");
    check(s.class_id >= 0 && s.class_id < static_cast<std::int64_t>(m.classes.size()), Errc::BadSpec,
      "sample '" + s.id + "' has class id out of range");
  }
  std::unordered_set<std::string> seen;
  for (const auto & [name, list] : m.split) {
    for (const auto & id : list) {
      check(ids.contains(id), Errc::BadSpec, "split '" + name + "' references unknown id '" + id + "'");
      check(seen.insert(id).second, Errc::BadSpec, "id '" + id + "' appears in more than one split");
    }
  }
}

void to_json(nlohmann::json & j, const Sample & s)
{
  j = nlohmann::json{{"id", s.id}, {"class_name", s.class_name}, {"class_id", s.class_id},
    {"pointcloud_path", s.pointcloud_path}, {"image_emb_id", s.image_emb_id}, {"text", s.text}};
}

void from_json(const nlohmann::json & j, Sample & s)
{
  j.at("id").get_to(s.id);
  j.at("class_name").get_to(s.class_name);
  j.at("class_id").get_to(s.class_id);
  j.at("pointcloud_path").get_to(s.pointcloud_path);
  s.image_emb_id = j.value("image_emb_id", s.id);
  s.text = j.value("text", s.class_name);
}

void to_json(nlohmann::json & j, const DatasetManifest & m)
{
  j = nlohmann::json{{"samples", m.samples}, {"classes", m.classes}, {"split", m.split}};
}

void from_json(const nlohmann::json & j, DatasetManifest & m)
{
  j.at("samples").get_to(m.samples);
  j.at("classes").get_to(m.classes);
  m.split.clear();
  for (const auto & [name, ids] : j.at("split").items()) {
    m.split[name] = read_ids(ids);
  }
}

DatasetManifest load_manifest(const std::filesystem::path & path)
{
  std::ifstream in(path);
  check(static_cast<bool>(in) && !std::filesystem::is_directory(path), Errc::Io, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    throw Error(Errc::BadSpec, "manifest " + path.string() + ": " + e.what());
  }
  auto m = j.get<DatasetManifest>();
  m.root = path.parent_path();
  validate(m);
  return m;
}

void save_manifest(const std::filesystem::path & path, const DatasetManifest & m)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), Errc::Io, "cannot write manifest " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

geom::PointCloud load_cloud(const DatasetManifest & m, const Sample & s)
{
  auto pc = geom::read_points(m.root / s.pointcloud_path);
  pc.id = s.id;
  return pc;
}

DatasetManifest gen_synthetic(const std::filesystem::path & out_dir, std::size_t classes,
  std::size_t per_class, std::size_t points_per_cloud, std::uint64_t seed)
{
  check(classes >= 1 && classes <= kShapeFamilyCount, Errc::TooManyClasses,
    "classes must lie in [1, " + std::to_string(kShapeFamilyCount) + "]");
  check(per_class >= 2, Errc::BadCount, "need at least two samples per class");
  check(points_per_cloud >= 1, Errc::BadCount, "need at least one point per cloud");

  DatasetManifest m;
  m.root = out_dir;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto family = family_from_index(c);
    m.classes.push_back(to_string(family));

    std::vector<std::string> ids;
    for (std::size_t k = 0; k < per_class; ++k) {
      Rng rng(mix_seed({seed, c, k}));
      const double scale = uni(rng, 0.5, 1.5);
      geom::PointCloud pc{sample_shape(family, points_per_cloud, scale, rng), {}};
      pc = geom::augment(pc, {.kind = geom::AugmentKind::rotation, .seed = mix_seed({seed, c, k, 0xA})});

      char buf[32];
      std::snprintf(buf, sizeof(buf), "_%04zu", k);
      Sample s;
      s.id = to_string(family) + buf;
      s.class_name = to_string(family);
      s.class_id = static_cast<std::int64_t>(c);
      s.pointcloud_path = "clouds/" + s.id + ".rcpts";
      s.image_emb_id = s.id;
      s.text = s.class_name;
      pc.id = s.id;
      geom::write_points(out_dir / s.pointcloud_path, geom::normalize_unit_sphere(pc));
      ids.push_back(s.id);
      m.samples.push_back(std::move(s));
    }

    // stratified 80/20 split; at least one sample on each side
    Rng split_rng(mix_seed({seed, c, 0x5917}));
    std::shuffle(ids.begin(), ids.end(), split_rng);
    const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(per_class))), 1, per_class - 1);
    auto & train = m.split["train"];
    auto & test = m.split["test"];
    train.insert(train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  }
  std::sort(m.split["train"].begin(), m.split["train"].end());
  std::sort(m.split["test"].begin(), m.split["test"].end());

  save_manifest(out_dir / "manifest.json", m);
  return m;
}

DatasetManifest unpair_images(const DatasetManifest & m, std::uint64_t seed)
{
  DatasetManifest out = m;
  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    by_class[out.samples[i].class_id].push_back(i);
  }
  for (auto & [cls, members] : by_class) {
    std::vector<std::string> image_ids;
    for (auto i : members) {
      image_ids.push_back(m.samples[i].image_emb_id);
    }
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(cls), 0x0A1}));
    std::shuffle(image_ids.begin(), image_ids.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.samples[members[k]].image_emb_id = image_ids[k];
    }
  }
  return out;
}

Episode sample_episode(const DatasetManifest & m, const EpisodeSpec & spec, std::size_t run_index)
{
  check(spec.ways >= 1 && spec.shots >= 1, Errc::BadSpec, "episode needs ways >= 1 and shots >= 1");
  check(spec.ways <= m.classes.size(), Errc::InsufficientSamples,
    std::to_string(spec.ways) + "-way episode but only " + std::to_string(m.classes.size()) + " classes");

  std::vector<std::vector<std::string>> by_class(m.classes.size());
  for (const auto & s : m.samples) {
    by_class[static_cast<std::size_t>(s.class_id)].push_back(s.id);
  }

  Rng rng(mix_seed({spec.seed, run_index, 0xE915}));
  std::vector<std::int64_t> order(m.classes.size());
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  Episode ep;
  const std::size_t need = spec.shots + spec.queries_per_class;
  for (std::size_t w = 0; w < spec.ways; ++w) {
    const auto cls = order[w];
    auto pool = by_class[static_cast<std::size_t>(cls)];
    check(pool.size() >= need, Errc::InsufficientSamples,
      "class '" + m.classes[static_cast<std::size_t>(cls)] + "' has " + std::to_string(pool.size()) +
      " samples, episode needs " + std::to_string(need));
    std::shuffle(pool.begin(), pool.end(), rng);
    ep.classes.push_back(cls);
    ep.support.insert(ep.support.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.shots));
    ep.query.insert(ep.query.end(), pool.begin() + static_cast<std::ptrdiff_t>(spec.shots),
      pool.begin() + static_cast<std::ptrdiff_t>(need));
  }
  return ep;
}

}  // namespace recon::data
