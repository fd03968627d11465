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
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace recon::teach
{

enum class Modality {image, text};

std::string to_string(Modality m);
Modality modality_from_string(const std::string & s);

/// Frozen per-id feature table. Record order is preserved for bit-exact round trips.
class TeacherEmbedding
{
public:
  TeacherEmbedding() = default;
  TeacherEmbedding(Modality modality, std::uint32_t dim);

  Modality modality() const noexcept {return modality_;}
  std::uint32_t dim() const noexcept {return dim_;}
  std::size_t size() const noexcept {return ids_.size();}
  const std::vector<std::string> & ids() const noexcept {return ids_;}

  /// Throws DuplicateId, ShapeMismatch or NonFinite.
  void add(const std::string & id, std::span<const float> vec);
  bool contains(const std::string & id) const;
  /// Throws MissingTeacher when absent.
  std::span<const float> lookup(const std::string & id) const;

private:
  Modality modality_ = Modality::image;
  std::uint32_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// RCEMB1 codec. The format carries no modality tag; the caller supplies it.
std::vector<std::uint8_t> encode_embeddings(const TeacherEmbedding & table);
TeacherEmbedding decode_embeddings(std::span<const std::uint8_t> bytes, Modality modality);
void save_embeddings(const std::filesystem::path & path, const TeacherEmbedding & table);
TeacherEmbedding load_embeddings(const std::filesystem::path & path, Modality modality);

struct OracleTeacherSpec
{
  std::uint32_t classes = 5;
  std::uint32_t dim = 32;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Unit-norm anchor for one class, fixed by spec.seed.
std::vector<float> class_anchor(const OracleTeacherSpec & spec, std::uint32_t cls);

/// normalize(anchor + N(0, sigma^2) noise); exactly the anchor when sigma is 0.
std::vector<float> oracle_teacher(const OracleTeacherSpec & spec, std::uint32_t cls, std::uint64_t sample_seed);

struct PromptSet
{
  std::vector<std::string> prefixes{""};
  std::vector<std::string> suffixes{""};
};

/// The 20-prefix x 4-suffix zero-shot prompt grid.
PromptSet default_prompt_grid();

/// Every prefix + class + suffix combination, duplicates removed, order kept.
std::vector<std::string> compose_prompts(const std::string & class_name, const PromptSet & prompts);

/// Mean of the normalized embeddings of every composed prompt, re-normalized.
/// Throws MissingPrompt if any composed string is absent from the table.
std::vector<float> text_class_embedding(const TeacherEmbedding & text_table, const std::string & class_name,
  const PromptSet & prompts);

/// Oracle text teacher: the class anchor, prompts ignored.
std::vector<float> text_class_embedding(const OracleTeacherSpec & spec, std::uint32_t cls);

void normalize_in_place(std::span<float> v);

}  // namespace recon::teach
