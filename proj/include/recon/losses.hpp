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
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace recon::loss
{

enum class Metric {infonce, l2, smooth_l1, cosine};

Metric metric_from_string(const std::string & s);
std::string to_string(Metric m);

inline constexpr double kDefaultTemperature = 0.1;
inline constexpr double kSmoothL1Beta = 1.0;

/// Supervised contrastive loss summed over anchors. Features must be unit
/// norm; anchors without positives contribute nothing.
torch::Tensor supcon_loss(const torch::Tensor & feats, const std::vector<std::int64_t> & labels,
  double tau = kDefaultTemperature);

/// Cross-modal InfoNCE summed over the batch. The teacher is detached and the
/// softmax denominator runs over every teacher row, positive included.
torch::Tensor infonce_cmc_loss(const torch::Tensor & student, const torch::Tensor & teacher,
  double tau = kDefaultTemperature);

/// Differentiable l2 Chamfer distance per set pair: pred [P, R, 3], target [P, T, 3] -> [P].
torch::Tensor chamfer_l2(const torch::Tensor & pred, const torch::Tensor & target);

/// Mean Chamfer distance over patches. Leading dims are flattened, the last
/// two are (points, 3). Zero patches give a zero loss.
torch::Tensor mpm_loss(const torch::Tensor & reconstructed, const torch::Tensor & target);

/// Sum over the batch of the per-dimension mean Smooth-l1 between student and
/// detached teacher rows.
torch::Tensor smooth_l1_con_loss(const torch::Tensor & student, const torch::Tensor & teacher,
  bool normalize = true, double beta = kSmoothL1Beta);

/// Sum over the batch of the per-dimension mean squared difference.
torch::Tensor l2_con_loss(const torch::Tensor & student, const torch::Tensor & teacher, bool normalize = true);

/// Sum over the batch of 1 - cos(student, teacher).
torch::Tensor cosine_con_loss(const torch::Tensor & student, const torch::Tensor & teacher);

/// Dispatches one student/teacher pair to the selected metric.
torch::Tensor contrastive_loss(Metric metric, const torch::Tensor & student, const torch::Tensor & teacher,
  double tau = kDefaultTemperature, bool normalize = true);

struct LossReport
{
  double total = 0.0;
  double rec = 0.0;
  double con = 0.0;
  std::map<std::string, double> con_components;
};

/// total = rec + con (unweighted). Throws NonFinite.
LossReport recon_total(double rec, double con, std::map<std::string, double> components = {});

}  // namespace recon::loss
