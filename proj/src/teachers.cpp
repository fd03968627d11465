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

#include "recon/teachers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "recon/binio.hpp"
#include "recon/error.hpp"
#include "recon/seed.hpp"

namespace recon::teach
{

namespace
{

constexpr std::string_view kEmbMagic = "RCEMB1";

}  // namespace

std::string to_string(Modality m)
{
  return m == Modality::image ? "image" : "text";
}

Modality modality_from_string(const std::string & s)
{
  if (s == "image") {return Modality::image;}
  if (s == "text") {return Modality::text;}
  throw Error(Errc::BadConfig, "unknown modality '" + s + "'");
}

TeacherEmbedding::TeacherEmbedding(Modality modality, std::uint32_t dim)
: modality_(modality), dim_(dim) {}

void TeacherEmbedding::add(const std::string & id, std::span<const float> vec)
{
  check(vec.size() == dim_, Errc::ShapeMismatch,
    "embedding for '" + id + "' has dim " + std::to_string(vec.size()) + ", table dim is " +
    std::to_string(dim_));
  check(std::all_of(vec.begin(), vec.end(), [](float v) {return std::isfinite(v);}),
    Errc::NonFinite, "embedding for '" + id + "' is not finite");
  check(!index_.contains(id), Errc::DuplicateId, "duplicate embedding id '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  data_.insert(data_.end(), vec.begin(), vec.end());
}

bool TeacherEmbedding::contains(const std::string & id) const
{
  return index_.contains(id);
}

std::span<const float> TeacherEmbedding::lookup(const std::string & id) const
{
  auto it = index_.find(id);
  check(it != index_.end(), Errc::MissingTeacher, "no " + to_string(modality_) + " embedding for '" + id + "'");
  return {data_.data() + it->second * dim_, dim_};
}

std::vector<std::uint8_t> encode_embeddings(const TeacherEmbedding & table)
{
  std::vector<std::uint8_t> out;
  binio::put_bytes(out, kEmbMagic);
  binio::put_u32(out, table.dim());
  binio::put_u32(out, static_cast<std::uint32_t>(table.size()));
  for (const auto & id : table.ids()) {
    check(id.size() <= 0xFFFF, Errc::BadSpec, "embedding id longer than 65535 bytes");
    binio::put_u16(out, static_cast<std::uint16_t>(id.size()));
    binio::put_bytes(out, id);
    for (float v : table.lookup(id)) {
      binio::put_f32(out, v);
    }
  }
  return out;
}

TeacherEmbedding decode_embeddings(std::span<const std::uint8_t> bytes, Modality modality)
{
  binio::Reader in(bytes);
  check(in.remaining() >= kEmbMagic.size() && in.str(kEmbMagic.size(), "magic") == kEmbMagic,
    Errc::BadMagic, "not an RCEMB1 payload");
  const std::uint32_t dim = in.u32("dim");
  const std::uint32_t count = in.u32("count");

  TeacherEmbedding table(modality, dim);
  std::vector<float> vec(dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint16_t len = in.u16("id length");
    std::string id = in.str(len, "id bytes");
    in.need(static_cast<std::size_t>(dim) * 4, "vector");
    for (auto & v : vec) {
      v = in.f32("vector");
    }
    table.add(id, vec);
  }
  return table;
}

void save_embeddings(const std::filesystem::path & path, const TeacherEmbedding & table)
{
  binio::write_file(path, encode_embeddings(table));
}

TeacherEmbedding load_embeddings(const std::filesystem::path & path, Modality modality)
{
  return decode_embeddings(binio::read_file(path), modality);
}

void normalize_in_place(std::span<float> v)
{
  double n2 = 0.0;
  for (float x : v) {
    n2 += static_cast<double>(x) * x;
  }
  const double n = std::sqrt(n2);
  if (n > 0.0) {
    for (auto & x : v) {
      x = static_cast<float>(x / n);
    }
  }
}

std::vector<float> class_anchor(const OracleTeacherSpec & spec, std::uint32_t cls)
{
  check(cls < spec.classes, Errc::BadClass,
    "class " + std::to_string(cls) + " out of range for " + std::to_string(spec.classes) + " classes");
  std::mt19937_64 rng(mix_seed({spec.seed, 0xA7C40, cls}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> v(spec.dim);
  for (auto & x : v) {
    x = static_cast<float>(normal(rng));
  }
  normalize_in_place(v);
  return v;
}

std::vector<float> oracle_teacher(const OracleTeacherSpec & spec, std::uint32_t cls, std::uint64_t sample_seed)
{
  check(spec.noise_sigma >= 0.0, Errc::BadSpec, "oracle noise sigma must be nonnegative");
  auto v = class_anchor(spec, cls);
  if (spec.noise_sigma == 0.0) {
    return v;
  }
  std::mt19937_64 rng(mix_seed({spec.seed, 0x5A3, cls, sample_seed}));
  std::normal_distribution<double> normal(0.0, spec.noise_sigma);
  for (auto & x : v) {
    x = static_cast<float>(x + normal(rng));
  }
  normalize_in_place(v);
  return v;
}

PromptSet default_prompt_grid()
{
  PromptSet p;
  p.prefixes = {
    "", "A ", "A model of ", "A model of a ", "An image of ", "An image of a ",
    "A 3D model of ", "A 3D model of a ", "A rendered model of ", "A rendered model of a ",
    "A point cloud of ", "A point cloud of a ", "A point cloud model of ",
    "A point cloud model of a ", "A 3D rendered model of ", "A 3D rendered model of a ",
    "A rendered image of ", "A rendered image of a ", "A 3D rendered image of ",
    "A 3D rendered image of a ",
  };
  p.suffixes = {"", ".", " with white background.", " with black context."};
  return p;
}

std::vector<std::string> compose_prompts(const std::string & class_name, const PromptSet & prompts)
{
  check(!prompts.prefixes.empty() && !prompts.suffixes.empty(), Errc::MissingPrompt,
    "prompt set needs at least one prefix and one suffix");
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto & pre : prompts.prefixes) {
    for (const auto & suf : prompts.suffixes) {
      auto s = pre + class_name + suf;
      if (seen.insert(s).second) {
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<float> text_class_embedding(const TeacherEmbedding & text_table, const std::string & class_name,
  const PromptSet & prompts)
{
  const auto strings = compose_prompts(class_name, prompts);
  std::vector<double> acc(text_table.dim(), 0.0);
  std::vector<float> tmp(text_table.dim());
  for (const auto & s : strings) {
    check(text_table.contains(s), Errc::MissingPrompt, "no text embedding for prompt '" + s + "'");
    auto v = text_table.lookup(s);
    std::copy(v.begin(), v.end(), tmp.begin());
    normalize_in_place(tmp);
    for (std::size_t d = 0; d < acc.size(); ++d) {
      acc[d] += tmp[d];
    }
  }
  std::vector<float> out(acc.size());
  if (strings.size() == 1) {
    return tmp;
  }
  for (std::size_t d = 0; d < acc.size(); ++d) {
    out[d] = static_cast<float>(acc[d] / static_cast<double>(strings.size()));
  }
  normalize_in_place(out);
  return out;
}

std::vector<float> text_class_embedding(const OracleTeacherSpec & spec, std::uint32_t cls)
{
  return class_anchor(spec, cls);
}

}  // namespace recon::teach
