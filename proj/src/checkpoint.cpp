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

#include "recon/checkpoint.hpp"

#include <fstream>

#include "recon/binio.hpp"
#include "recon/error.hpp"

namespace recon::model
{

namespace
{

constexpr const char * kFormat = "recon-checkpoint-1";

std::filesystem::path blob_path(const std::filesystem::path & path)
{
  auto p = path;
  p.replace_extension(".bin");
  return p;
}

void copy_parameters(torch::nn::Module & dst, const torch::nn::Module & src)
{
  torch::NoGradGuard no_grad;
  auto from = src.named_parameters();
  for (auto & item : dst.named_parameters()) {
    const auto * other = from.find(item.key());
    check(other != nullptr, Errc::VariantMismatch, "parameter " + item.key() + " missing in source");
    item.value().copy_(*other);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path & path, ReConModel & model, const CheckpointMeta & meta)
{
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::uint8_t> blob;
  for (const auto & item : model->named_parameters()) {
    auto t = item.value().detach().to(torch::kFloat32).contiguous();
    tensors.push_back({{"name", item.key()}, {"shape", t.sizes().vec()}, {"dtype", "float32"}});
    const float * p = t.data_ptr<float>();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      binio::put_f32(blob, p[i]);
    }
  }

  nlohmann::json j;
  j["format"] = kFormat;
  j["config"] = model->config();
  j["seeds"] = {{"model", meta.model_seed}, {"run", meta.run_seed}};
  j["blob"] = blob_path(path).filename().string();
  j["tensors"] = std::move(tensors);
  j["extra"] = meta.extra;

  binio::write_file(blob_path(path), blob);
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), Errc::Io, "cannot write checkpoint " + path.string());
  out << j.dump(2) << '\n';
}

ReConModel load_checkpoint(const std::filesystem::path & path, CheckpointMeta * meta)
{
  std::ifstream in(path);
  check(static_cast<bool>(in) && !std::filesystem::is_directory(path), Errc::Io, "cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    throw Error(Errc::BadSpec, "checkpoint " + path.string() + ": " + e.what());
  }
  check(j.value("format", "") == kFormat, Errc::BadMagic, "not a checkpoint manifest: " + path.string());

  auto cfg = j.at("config").get<ModelConfig>();
  // CLS is added after construction so that registration order matches the saved model.
  bool has_cls = cfg.has_query(QueryKind::CLS);
  auto build_cfg = cfg;
  std::erase(build_cfg.queries, QueryKind::CLS);
  auto model = build_model(build_cfg, j.at("seeds").at("model").get<std::uint64_t>());
  if (has_cls) {
    model->add_query(QueryKind::CLS, 0);
  }

  const auto bytes = binio::read_file(path.parent_path() / j.at("blob").get<std::string>());
  binio::Reader rd(bytes);
  auto params = model->named_parameters();
  const auto & entries = j.at("tensors");
  check(entries.size() == params.size(), Errc::VariantMismatch,
    "checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
    std::to_string(params.size()));

  torch::NoGradGuard no_grad;
  for (const auto & e : entries) {
    const auto name = e.at("name").get<std::string>();
    auto * p = params.find(name);
    check(p != nullptr, Errc::VariantMismatch, "unexpected tensor " + name);
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    check(p->sizes().vec() == shape, Errc::VariantMismatch, "shape mismatch for " + name);
    auto t = torch::empty(shape, torch::kFloat32);
    float * dst = t.data_ptr<float>();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      dst[i] = rd.f32("tensor data");
    }
    p->copy_(t);
  }
  check(rd.remaining() == 0, Errc::BadSpec, "checkpoint blob has trailing bytes");

  if (meta != nullptr) {
    meta->config = model->config();
    meta->model_seed = j.at("seeds").at("model").get<std::uint64_t>();
    meta->run_seed = j.at("seeds").at("run").get<std::uint64_t>();
    meta->extra = j.value("extra", nlohmann::json::object());
  }
  return model;
}

ReConModel clone_model(ReConModel & model)
{
  auto cfg = model->config();
  bool has_cls = cfg.has_query(QueryKind::CLS);
  std::erase(cfg.queries, QueryKind::CLS);
  auto copy = build_model(cfg, 0);
  if (has_cls) {
    copy->add_query(QueryKind::CLS, 0);
  }
  copy->to(model->tower->norm->weight.scalar_type());
  copy_parameters(*copy, *model);
  return copy;
}

std::uint64_t parameter_checksum(const torch::nn::Module & module, const std::string & prefix)
{
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto & item : module.named_parameters()) {
    if (!prefix.empty() && item.key().rfind(prefix, 0) != 0) {
      continue;
    }
    auto t = item.value().detach().contiguous();
    const auto * bytes = static_cast<const std::uint8_t *>(t.data_ptr());
    const auto n = static_cast<std::size_t>(t.numel()) * t.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

}  // namespace recon::model
