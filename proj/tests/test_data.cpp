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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "recon/data.hpp"
#include "recon/error.hpp"

using namespace recon;
using namespace recon::data;
namespace fs = std::filesystem;

namespace
{

Errc code_of(auto && fn)
{
  try {
    fn();
  } catch (const Error & e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::Io;
}

fs::path scratch(const std::string & name)
{
  auto p = fs::temp_directory_path() / ("recon_test_data_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("synthetic generation counts, splits and normalization")
{
  const auto dir = scratch("gen");
  auto m = gen_synthetic(dir, 5, 20, 1024, 3);
  CHECK(m.samples.size() == 100);
  CHECK(m.classes.size() == 5);
  CHECK(m.split.at("train").size() == 80);
  CHECK(m.split.at("test").size() == 20);

  std::set<std::string> train(m.split.at("train").begin(), m.split.at("train").end());
  std::set<std::string> all;
  std::map<std::int64_t, int> train_per_class;
  for (const auto & s : m.samples) {
    all.insert(s.id);
    CHECK(s.text == s.class_name);
    CHECK(m.classes[static_cast<std::size_t>(s.class_id)] == s.class_name);
    train_per_class[s.class_id] += train.contains(s.id) ? 1 : 0;
  }
  for (const auto & id : m.split.at("test")) {
    CHECK_FALSE(train.contains(id));
    all.erase(id);
  }
  for (const auto & id : train) {
    all.erase(id);
  }
  CHECK(all.empty());
  for (const auto & [c, n] : train_per_class) {
    CHECK(n == 16);
  }

  for (std::size_t i = 0; i < m.samples.size(); i += 13) {
    auto pc = load_cloud(m, m.samples[i]);
    REQUIRE(pc.points.size() == 1024);
    double cx = 0, cy = 0, cz = 0, rmax = 0;
    for (const auto & p : pc.points) {
      cx += p[0];
      cy += p[1];
      cz += p[2];
      rmax = std::max(rmax, std::sqrt(double(p[0]) * p[0] + double(p[1]) * p[1] + double(p[2]) * p[2]));
    }
    CHECK(std::sqrt(cx * cx + cy * cy + cz * cz) / 1024 <= 1e-6);
    CHECK(rmax <= 1.0 + 1e-6);
    CHECK(rmax >= 1.0 - 1e-5);
  }

  auto loaded = load_manifest(dir / "manifest.json");
  CHECK(nlohmann::json(loaded) == nlohmann::json(m));
  fs::remove_all(dir);
}

TEST_CASE("regeneration is bit identical")
{
  const auto a = scratch("a");
  const auto b = scratch("b");
  const auto c = scratch("c");
  auto ma = gen_synthetic(a, 3, 4, 256, 11);
  gen_synthetic(b, 3, 4, 256, 11);
  gen_synthetic(c, 3, 4, 256, 12);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  bool any_diff = false;
  for (const auto & s : ma.samples) {
    CHECK(slurp(a / s.pointcloud_path) == slurp(b / s.pointcloud_path));
    any_diff = any_diff || slurp(a / s.pointcloud_path) != slurp(c / s.pointcloud_path);
  }
  CHECK(any_diff);
  for (const auto & d : {a, b, c}) {
    fs::remove_all(d);
  }
}

TEST_CASE("every shape family samples finite points")
{
  std::mt19937_64 rng(5);
  auto sphere = sample_shape(ShapeFamily::sphere, 500, 0.7, rng);
  for (const auto & p : sphere) {
    CHECK(std::sqrt(double(p[0]) * p[0] + double(p[1]) * p[1] + double(p[2]) * p[2]) == doctest::Approx(0.7).epsilon(1e-6));
  }
  for (std::size_t f = 0; f < kShapeFamilyCount; ++f) {
    auto pts = sample_shape(family_from_index(f), 300, 1.0, rng);
    CHECK(pts.size() == 300);
    for (const auto & p : pts) {
      CHECK((std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2])));
    }
  }
  CHECK(code_of([] {gen_synthetic(scratch("x"), kShapeFamilyCount + 1, 2, 8, 0);}) == Errc::TooManyClasses);
  CHECK(code_of([] {gen_synthetic(scratch("x"), 2, 1, 8, 0);}) == Errc::BadCount);
}

TEST_CASE("manifest validation and JSON round trip")
{
  DatasetManifest m;
  m.classes = {"a", "b"};
  m.samples = {{"x", "a", 0, "x.rcpts", "x", "a"}, {"y", "b", 1, "y.rcpts", "y", "b"}};
  m.split = {{"train", {"x"}}, {"test", {"y"}}};
  validate(m);
  nlohmann::json j = m;
  auto back = j.get<DatasetManifest>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.sample("y").class_id == 1);
  CHECK(code_of([&] {back.sample("z");}) == Errc::BadSpec);

  auto dup = m;
  dup.samples.push_back(m.samples[0]);
  CHECK(code_of([&] {validate(dup);}) == Errc::DuplicateId);
  auto bad_class = m;
  bad_class.samples[1].class_id = 2;
  CHECK(code_of([&] {validate(bad_class);}) == Errc::BadSpec);
  auto overlap = m;
  overlap.split["test"].push_back("x");
  CHECK(code_of([&] {validate(overlap);}) == Errc::BadSpec);
  CHECK(code_of([&] {load_manifest(scratch("missing") / "manifest.json");}) == Errc::Io);
}

TEST_CASE("unpairing permutes image ids within each class")
{
  const auto dir = scratch("unpair");
  auto m = gen_synthetic(dir, 3, 10, 16, 1);
  auto u = unpair_images(m, 4);
  int moved = 0;
  std::map<std::int64_t, std::multiset<std::string>> before, after;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(u.samples[i].id == m.samples[i].id);
    before[m.samples[i].class_id].insert(m.samples[i].image_emb_id);
    after[u.samples[i].class_id].insert(u.samples[i].image_emb_id);
    moved += u.samples[i].image_emb_id != m.samples[i].image_emb_id ? 1 : 0;
  }
  CHECK((before == after));
  CHECK(moved > 0);
  fs::remove_all(dir);
}

TEST_CASE("episode sampling")
{
  const auto dir = scratch("episodes");
  auto m = gen_synthetic(dir, 6, 16, 16, 2);
  EpisodeSpec spec{5, 10, 5, 10, 7};
  std::set<std::vector<std::string>> distinct;
  for (std::size_t r = 0; r < spec.runs; ++r) {
    auto e = sample_episode(m, spec, r);
    CHECK(e.support.size() == 50);
    CHECK(e.query.size() == 25);
    CHECK(std::set<std::int64_t>(e.classes.begin(), e.classes.end()).size() == 5);
    std::set<std::string> ids(e.support.begin(), e.support.end());
    ids.insert(e.query.begin(), e.query.end());
    CHECK(ids.size() == 75);
    std::map<std::int64_t, int> per_class;
    for (const auto & id : ids) {
      per_class[m.sample(id).class_id] += 1;
    }
    CHECK(per_class.size() == 5);
    for (const auto & [c, n] : per_class) {
      CHECK(n == 15);
    }
    auto again = sample_episode(m, spec, r);
    CHECK((again.support == e.support));
    CHECK((again.query == e.query));
    distinct.insert(e.support);
  }
  CHECK(distinct.size() == spec.runs);

  CHECK(code_of([&] {sample_episode(m, EpisodeSpec{7, 1, 1, 1, 0}, 0);}) == Errc::InsufficientSamples);
  CHECK(code_of([&] {sample_episode(m, EpisodeSpec{5, 12, 5, 1, 0}, 0);}) == Errc::InsufficientSamples);
  fs::remove_all(dir);
}
