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

#include "recon/losses.hpp"

#include <cmath>

#include "recon/error.hpp"

namespace recon::loss
{

namespace F = torch::nn::functional;

namespace
{

void require_pair(const torch::Tensor & a, const torch::Tensor & b)
{
  check(a.dim() == 2 && a.sizes() == b.sizes(), Errc::ShapeMismatch,
    "student and teacher must both be B x D with equal shapes");
}

torch::Tensor unit_rows(const torch::Tensor & x)
{
  return F::normalize(x, F::NormalizeFuncOptions().p(2).dim(-1).eps(1e-12));
}

}  // namespace

Metric metric_from_string(const std::string & s)
{
  if (s == "infonce") {return Metric::infonce;}
  if (s == "l2") {return Metric::l2;}
  if (s == "smooth_l1") {return Metric::smooth_l1;}
  if (s == "cosine") {return Metric::cosine;}
  throw Error(Errc::BadConfig, "unknown contrastive metric '" + s + "'");
}

std::string to_string(Metric m)
{
  switch (m) {
    case Metric::infonce: return "infonce";
    case Metric::l2: return "l2";
    case Metric::smooth_l1: return "smooth_l1";
    case Metric::cosine: return "cosine";
  }
  return "smooth_l1";
}

torch::Tensor supcon_loss(const torch::Tensor & feats, const std::vector<std::int64_t> & labels,
  double tau)
{
  check(feats.dim() == 2, Errc::ShapeMismatch, "supcon features must be B x D");
  const auto b = feats.size(0);
  check(b >= 2, Errc::BadBatch, "supcon needs at least two samples");
  check(static_cast<std::int64_t>(labels.size()) == b, Errc::ShapeMismatch, "one label per row");
  check(tau > 0.0, Errc::BadConfig, "temperature must be positive");
  const double dev = (feats.detach().norm(2, 1) - 1.0).abs().max().item<double>();
  check(dev <= 1e-4, Errc::NotNormalized, "supcon features must be unit norm");

  auto lab = torch::tensor(labels, torch::kInt64);
  auto eye = torch::eye(b, torch::kBool);
  auto positive = lab.unsqueeze(0).eq(lab.unsqueeze(1)).logical_and(eye.logical_not());

  auto logits = torch::matmul(feats, feats.t()) / tau;
  // exclude the anchor itself from the denominator
  auto log_prob = logits - logits.masked_fill(eye, -INFINITY).logsumexp(1, true);

  auto pos = positive.to(feats.scalar_type());
  auto n_pos = pos.sum(1);
  auto has_pos = n_pos > 0;
  auto per_anchor = -(log_prob.masked_fill(positive.logical_not(), 0.0) * pos).sum(1) /
    n_pos.clamp_min(1.0);
  return per_anchor.masked_fill(has_pos.logical_not(), 0.0).sum();
}

torch::Tensor infonce_cmc_loss(const torch::Tensor & student, const torch::Tensor & teacher, double tau)
{
  require_pair(student, teacher);
  check(student.size(0) >= 2, Errc::BadBatch, "InfoNCE needs at least two samples");
  check(tau > 0.0, Errc::BadConfig, "temperature must be positive");
  auto logits = torch::matmul(student, teacher.detach().t()) / tau;
  return (logits.logsumexp(1) - logits.diagonal()).sum();
}

torch::Tensor chamfer_l2(const torch::Tensor & pred, const torch::Tensor & target)
{
  check(pred.dim() == 3 && target.dim() == 3 && pred.size(0) == target.size(0) &&
    pred.size(2) == 3 && target.size(2) == 3, Errc::ShapeMismatch, "chamfer expects [P, N, 3] pairs");
  check(pred.size(1) > 0 && target.size(1) > 0, Errc::EmptySet, "chamfer needs nonempty sets");
  auto d = (pred.unsqueeze(2) - target.unsqueeze(1)).pow(2).sum(-1);  // P x R x T
  return std::get<0>(d.min(2)).mean(1) + std::get<0>(d.min(1)).mean(1);
}

torch::Tensor mpm_loss(const torch::Tensor & reconstructed, const torch::Tensor & target)
{
  check(reconstructed.dim() >= 2 && target.dim() >= 2 && reconstructed.dim() == target.dim(),
    Errc::ShapeMismatch, "mpm expects [..., N, 3] tensors of equal rank");
  const auto lead_r = reconstructed.numel() == 0 ? 0 :
    reconstructed.numel() / (reconstructed.size(-2) * 3);
  const auto lead_t = target.numel() == 0 ? 0 : target.numel() / (target.size(-2) * 3);
  bool same_lead = true;
  for (std::int64_t d = 0; d + 2 < reconstructed.dim(); ++d) {
    same_lead = same_lead && reconstructed.size(d) == target.size(d);
  }
  check(same_lead && lead_r == lead_t, Errc::CountMismatch,
    "predicted and ground-truth patch counts differ");
  if (lead_r == 0) {
    return reconstructed.sum() * 0.0;
  }
  auto p = reconstructed.reshape({lead_r, reconstructed.size(-2), 3});
  auto t = target.reshape({lead_t, target.size(-2), 3});
  return chamfer_l2(p, t).mean();
}

torch::Tensor smooth_l1_con_loss(const torch::Tensor & student, const torch::Tensor & teacher,
  bool normalize, double beta)
{
  require_pair(student, teacher);
  auto s = normalize ? unit_rows(student) : student;
  auto t = normalize ? unit_rows(teacher.detach()) : teacher.detach();
  auto d = (s - t).abs();
  auto per_dim = torch::where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta);
  return per_dim.mean(1).sum();
}

torch::Tensor l2_con_loss(const torch::Tensor & student, const torch::Tensor & teacher, bool normalize)
{
  require_pair(student, teacher);
  auto s = normalize ? unit_rows(student) : student;
  auto t = normalize ? unit_rows(teacher.detach()) : teacher.detach();
  return (s - t).pow(2).mean(1).sum();
}

torch::Tensor cosine_con_loss(const torch::Tensor & student, const torch::Tensor & teacher)
{
  require_pair(student, teacher);
  return (1.0 - (unit_rows(student) * unit_rows(teacher.detach())).sum(1)).sum();
}

torch::Tensor contrastive_loss(Metric metric, const torch::Tensor & student, const torch::Tensor & teacher,
  double tau, bool normalize)
{
  switch (metric) {
    case Metric::infonce:
      return infonce_cmc_loss(normalize ? unit_rows(student) : student,
          normalize ? unit_rows(teacher.detach()) : teacher.detach(), tau);
    case Metric::l2:
      return l2_con_loss(student, teacher, normalize);
    case Metric::smooth_l1:
      return smooth_l1_con_loss(student, teacher, normalize);
    case Metric::cosine:
      return cosine_con_loss(student, teacher);
  }
  return smooth_l1_con_loss(student, teacher, normalize);
}

LossReport recon_total(double rec, double con, std::map<std::string, double> components)
{
  check(std::isfinite(rec) && std::isfinite(con), Errc::NonFinite, "loss terms must be finite");
  LossReport r;
  r.rec = rec;
  r.con = con;
  r.total = rec + con;
  r.con_components = std::move(components);
  return r;
}

}  // namespace recon::loss
