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

#include "recon/error.hpp"

namespace recon
{

std::string_view errc_name(Errc code)
{
  switch (code) {
    case Errc::NonFinite: return "NonFinite";
    case Errc::BadCount: return "BadCount";
    case Errc::EmptySet: return "EmptySet";
    case Errc::BadSpec: return "BadSpec";
    case Errc::BadRatio: return "BadRatio";
    case Errc::BadConfig: return "BadConfig";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingTaps: return "MissingTaps";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::BadBatch: return "BadBatch";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::Truncated: return "Truncated";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::BadClass: return "BadClass";
    case Errc::MissingPrompt: return "MissingPrompt";
    case Errc::TooManyClasses: return "TooManyClasses";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::BadSchedule: return "BadSchedule";
    case Errc::VariantMismatch: return "VariantMismatch";
    case Errc::MissingTeacher: return "MissingTeacher";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace recon
