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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "recon/error.hpp"
#include "recon/losses.hpp"
#include "recon/teachers.hpp"

using namespace recon;
using namespace recon::teach;

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

std::vector<float> random_vec(std::size_t dim, std::mt19937_64 & rng)
{
  std::normal_distribution<float> n;
  std::vector<float> v(dim);
  for (auto & x : v) {
    x = n(rng);
  }
  return v;
}

double cosine(const std::vector<float> & a, const std::vector<float> & b)
{
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Independent RCEMB1 writer used to pin the byte layout.
std::vector<std::uint8_t> hand_encode(std::uint32_t dim, const std::vector<std::pair<std::string, std::vector<float>>> & recs)
{
  std::vector<std::uint8_t> out{'R', 'C', 'E', 'M', 'B', '1'};
  auto u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
      }
    };
  u32(dim);
  u32(static_cast<std::uint32_t>(recs.size()));
  for (const auto & [id, v] : recs) {
    out.push_back(static_cast<std::uint8_t>(id.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>(id.size() >> 8));
    out.insert(out.end(), id.begin(), id.end());
    for (float f : v) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      u32(bits);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("RCEMB1 byte layout and round trip")
{
  std::mt19937_64 rng(1);
  std::vector<std::pair<std::string, std::vector<float>>> recs;
  TeacherEmbedding t(Modality::image, 7);
  for (int i = 0; i < 20; ++i) {
    auto v = random_vec(7, rng);
    v[0] = (i == 3) ? -0.0F : v[0];
    v[1] = (i == 4) ? 1e-40F : v[1];  // denormal survives
    std::string id = "s\xc3\xa9" + std::to_string(i);
    recs.emplace_back(id, v);
    t.add(id, v);
  }
  auto bytes = encode_embeddings(t);
  CHECK((bytes == hand_encode(7, recs)));

  auto back = decode_embeddings(bytes, Modality::image);
  REQUIRE(back.size() == 20);
  CHECK(back.dim() == 7);
  CHECK((back.ids() == t.ids()));
  for (const auto & [id, v] : recs) {
    auto got = back.lookup(id);
    CHECK(std::memcmp(got.data(), v.data(), v.size() * 4) == 0);
  }

  const auto path = std::filesystem::temp_directory_path() / "recon_test_teachers.rcemb";
  save_embeddings(path, t);
  auto file = load_embeddings(path, Modality::text);
  CHECK(file.modality() == Modality::text);
  CHECK((encode_embeddings(file) == bytes));
  std::filesystem::remove(path);
  CHECK(code_of([&] {load_embeddings(path, Modality::text);}) == Errc::Io);
}

TEST_CASE("empty table is valid")
{
  TeacherEmbedding t(Modality::text, 16);
  auto bytes = encode_embeddings(t);
  CHECK(bytes.size() == 14);
  auto back = decode_embeddings(bytes, Modality::text);
  CHECK(back.size() == 0);
  CHECK(back.dim() == 16);
}

TEST_CASE("RCEMB1 decode errors")
{
  std::vector<float> v{1.0F, 2.0F};
  auto good = hand_encode(2, {{"a", v}, {"b", v}});

  auto bad = good;
  bad[5] = '2';
  CHECK(code_of([&] {decode_embeddings(bad, Modality::image);}) == Errc::BadMagic);
  CHECK(code_of([&] {decode_embeddings(std::span(good.data(), 3), Modality::image);}) == Errc::BadMagic);
  for (std::size_t cut : {std::size_t{6}, std::size_t{12}, good.size() - 1, std::size_t{15}}) {
    CHECK(code_of([&] {decode_embeddings(std::span(good.data(), cut), Modality::image);}) == Errc::Truncated);
  }
  auto dup = hand_encode(2, {{"a", v}, {"a", v}});
  CHECK(code_of([&] {decode_embeddings(dup, Modality::image);}) == Errc::DuplicateId);

  TeacherEmbedding t(Modality::image, 2);
  t.add("x", v);
  CHECK(code_of([&] {t.add("x", v);}) == Errc::DuplicateId);
  std::vector<float> three{1, 2, 3};
  CHECK(code_of([&] {t.add("y", three);}) == Errc::ShapeMismatch);
  CHECK(code_of([&] {t.lookup("zzz");}) == Errc::MissingTeacher);
}

TEST_CASE("oracle teacher")
{
  OracleTeacherSpec spec{5, 32, 0.0, 9};
  for (std::uint32_t c = 0; c < 5; ++c) {
    auto anchor = class_anchor(spec, c);
    CHECK(cosine(anchor, anchor) == doctest::Approx(1.0));
    CHECK((oracle_teacher(spec, c, 1) == anchor));
    CHECK((oracle_teacher(spec, c, 2) == oracle_teacher(spec, c, 1)));
    CHECK((text_class_embedding(spec, c) == anchor));
  }
  CHECK(code_of([&] {oracle_teacher(spec, 5, 0);}) == Errc::BadClass);

  spec.noise_sigma = 0.1;
  CHECK((oracle_teacher(spec, 1, 7) == oracle_teacher(spec, 1, 7)));
  CHECK_FALSE((oracle_teacher(spec, 1, 7) == oracle_teacher(spec, 1, 8)));

  double intra = 0.0;
  double inter = 0.0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    const auto c = static_cast<std::uint32_t>(i % 5);
    auto a = oracle_teacher(spec, c, 2 * static_cast<std::uint64_t>(i));
    intra += cosine(a, oracle_teacher(spec, c, 2 * static_cast<std::uint64_t>(i) + 1));
    inter += cosine(a, oracle_teacher(spec, (c + 1) % 5, 2 * static_cast<std::uint64_t>(i) + 1));
  }
  CHECK(intra / draws > inter / draws);
  // per-dimension noise: E[cos] of two noisy copies is about 1 / (1 + dim * sigma^2)
  CHECK(intra / draws == doctest::Approx(1.0 / (1.0 + 32 * 0.01)).epsilon(0.03));
}

TEST_CASE("prompt composition and text class embeddings")
{
  auto grid = default_prompt_grid();
  CHECK(grid.prefixes.size() == 20);
  CHECK(grid.suffixes.size() == 4);
  auto strings = compose_prompts("chair", grid);
  CHECK(strings.size() == 80);

  std::mt19937_64 rng(4);
  TeacherEmbedding table(Modality::text, 6);
  for (const auto & s : strings) {
    table.add(s, random_vec(6, rng));
  }

  // ensemble is the renormalized mean of normalized prompt embeddings
  auto ens = text_class_embedding(table, "chair", grid);
  std::vector<double> acc(6, 0.0);
  for (const auto & s : strings) {
    auto v = table.lookup(s);
    double n = 0;
    for (float x : v) {n += double(x) * x;}
    for (std::size_t d = 0; d < 6; ++d) {acc[d] += v[d] / std::sqrt(n);}
  }
  std::vector<float> want(acc.begin(), acc.end());
  CHECK(cosine(ens, want) == doctest::Approx(1.0).epsilon(1e-6));
  double norm = 0;
  for (float x : ens) {norm += double(x) * x;}
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

  PromptSet single{{"A 3D model of "}, {"."}};
  auto one = text_class_embedding(table, "chair", single);
  auto raw = table.lookup("A 3D model of chair.");
  std::vector<float> unit(raw.begin(), raw.end());
  normalize_in_place(unit);
  CHECK((one == unit));

  PromptSet twice{{"A 3D model of ", "A 3D model of "}, {"."}};
  CHECK(compose_prompts("chair", twice).size() == 1);
  CHECK((text_class_embedding(table, "chair", twice) == one));

  CHECK(code_of([&] {text_class_embedding(table, "table", single);}) == Errc::MissingPrompt);
  CHECK(code_of([&] {compose_prompts("chair", PromptSet{{}, {""}});}) == Errc::MissingPrompt);
}

TEST_CASE("teacher targets receive no gradient")
{
  std::mt19937_64 rng(2);
  TeacherEmbedding table(Modality::image, 4);
  table.add("a", random_vec(4, rng));
  auto before = encode_embeddings(table);
  auto span = table.lookup("a");
  auto target = torch::from_blob(const_cast<float *>(span.data()), {1, 4}, torch::kFloat32);
  auto student = torch::randn({1, 4}, torch::requires_grad());
  loss::smooth_l1_con_loss(student, target).backward();
  CHECK(student.grad().defined());
  CHECK_FALSE(target.requires_grad());
  CHECK((encode_embeddings(table) == before));
}
