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

#include <json.hpp>

#include "recon/model.hpp"

namespace recon::model
{

struct CheckpointMeta
{
  ModelConfig config;
  std::uint64_t model_seed = 0;
  std::uint64_t run_seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes `path` (JSON manifest of {name, shape, dtype} in blob order, the
/// model config and seeds) and a sibling `.bin` blob of float32 LE tensors.
void save_checkpoint(const std::filesystem::path & path, ReConModel & model, const CheckpointMeta & meta);

/// Rebuilds the model from the stored config and copies every tensor.
ReConModel load_checkpoint(const std::filesystem::path & path, CheckpointMeta * meta = nullptr);

/// Deep copy through a fresh build plus parameter copy.
ReConModel clone_model(ReConModel & model);

/// FNV-1a over the raw bytes of the selected parameters, in registration order.
std::uint64_t parameter_checksum(const torch::nn::Module & module, const std::string & prefix = {});

}  // namespace recon::model
