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

#include "fcil/checkpoint.hpp"

#include <sstream>

#include "fcil/binary_io.hpp"
#include "fcil/error.hpp"

namespace fcil::models {

namespace {
constexpr std::string_view kMagic = "FCILCKPT";
}

const std::vector<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return &v;
  return nullptr;
}

const std::vector<double>& Checkpoint::require(const std::string& name) const {
  const auto* v = find(name);
  if (!v) throw FormatError("checkpoint has no entry '" + name + "'");
  return *v;
}

const std::string& Checkpoint::header_value(const std::string& key) const {
  const auto it = header.find(key);
  if (it == header.end()) throw FormatError("checkpoint header has no key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::string text;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw UsageError("checkpoint header entry '" + k + "' contains a separator");
    }
    text += k + "=" + v + "\n";
  }
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.str(text);
  w.u64(ckpt.entries.size());
  for (const auto& [name, values] : ckpt.entries) {
    w.str(name);
    w.u64(values.size());
    w.f64s(values);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::istringstream text(r.str());
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed checkpoint header line '" + line + "'");
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto n = r.u64();
    if (n > r.remaining() / sizeof(double)) throw FormatError("checkpoint entry '" + name + "' overruns file");
    std::vector<double> values(n);
    r.f64s(values);
    ckpt.entries.emplace_back(std::move(name), std::move(values));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint entries");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

Checkpoint model_checkpoint(const ClientModel& model) {
  Checkpoint ckpt;
  ckpt.header = model.arch().to_header();
  for (const auto& p : model.named_parameters()) {
    const auto d = p.value.data();
    ckpt.entries.emplace_back(p.name, std::vector<double>(d.begin(), d.end()));
  }
  return ckpt;
}

ParamVector params_from_checkpoint(const Checkpoint& ckpt, const ClientModel& layout) {
  std::vector<double> flat;
  flat.reserve(layout.parameter_count());
  for (const auto& p : layout.named_parameters()) {
    const auto& v = ckpt.require(p.name);
    if (v.size() != p.value.numel()) {
      throw FormatError("checkpoint entry '" + p.name + "' has " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(p.value.numel()));
    }
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return ParamVector(std::move(flat));
}

ClientModel model_from_checkpoint(const Checkpoint& ckpt) {
  ClientModel model(ArchConfig::from_header(ckpt.header), 0);
  model.load(params_from_checkpoint(ckpt, model));
  return model;
}

}  // namespace fcil::models
