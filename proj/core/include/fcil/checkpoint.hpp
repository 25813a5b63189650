// Copyright 2026 The fcil Authors. All Rights Reserved.
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
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcil/models.hpp"

namespace fcil::models {

// On-disk layout (all integers and floats little-endian):
//   "FCILCKPT" | u32 version | u32 header length | header text (key=value lines)
//   | u64 entry count | per entry: u32 name length, name, u64 value count, f64 values
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, std::vector<double>>> entries;

  const std::vector<double>* find(const std::string& name) const;
  const std::vector<double>& require(const std::string& name) const;
  const std::string& header_value(const std::string& key) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Architecture header plus one entry per named parameter.
Checkpoint model_checkpoint(const ClientModel& model);
// Rebuilds the model from a checkpoint written by model_checkpoint.
ClientModel model_from_checkpoint(const Checkpoint& ckpt);
// Parameters in flatten() order, checked by name and length against the architecture.
ParamVector params_from_checkpoint(const Checkpoint& ckpt, const ClientModel& layout);

}  // namespace fcil::models
