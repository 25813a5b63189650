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
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fcil/gaussian.hpp"
#include "fcil/orchestrator.hpp"

namespace fcil::cli {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// "key = value" lines; '#' starts a comment. Throws ConfigError on a line
// without '=' or with an empty key. Keys are not checked here.
KeyValues parse_config_text(std::string_view text);
KeyValues read_config_file(const std::filesystem::path& path);

// Everything a run needs. Besides the FederationConfig keys a config file
// may set seeds (comma list), out, cifar10_dir and cifar100_dir.
struct RunConfigFile {
  orchestrator::FederationConfig config;
  orchestrator::DataPaths paths;
  std::filesystem::path out = "fcil_run";
  std::vector<std::uint64_t> seeds;

  // Key/value echo that resolve_run() reads back to the same run.
  KeyValues entries() const;
};

// Layering: defaults(sequence, scale) <- file <- flags. Sequence and scale are
// looked up first (flags win), defaulting to the toy sequence. Unknown keys
// and bad values throw ConfigError.
RunConfigFile resolve_run(const KeyValues& file, const KeyValues& flags);

std::vector<std::uint64_t> parse_seeds(std::string_view text);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Runs every seed and writes metrics.csv, accuracy_dump.csv, manifest.json,
// run.cfg and checkpoints/seed_<s>/task_<t>.ckpt under run.out. resume may be
// a checkpoint file (one seed only) or an earlier output directory, in which
// case each seed continues from its latest checkpoint there.
int cmd_run(const RunConfigFile& run, const std::optional<std::filesystem::path>& resume,
            std::ostream& out, std::ostream& err);

struct ReportRow {
  std::string method;
  std::string sequence;
  std::size_t seeds = 0;
  metrics::MeanSd accuracy;
  metrics::MeanSd forgetting;
};

// Groups metrics rows by (method, sequence), sorted by method then sequence.
std::vector<ReportRow> summarize(const std::vector<metrics::MetricsRow>& rows);

// Each input is a run directory or a metrics.csv file. Prints the summary
// table and, when csv_out is set, writes it as CSV.
int cmd_report(const std::vector<std::filesystem::path>& inputs,
               const std::optional<std::filesystem::path>& csv_out, std::ostream& out, std::ostream& err);

enum class Distance { kW2, kKl, kBhattacharyya };
Distance parse_distance(const std::string& name);

// Full matrix d(g_i, g_j), diagonal included.
std::vector<std::vector<double>> distance_matrix(const std::vector<geometry::GaussianEmbedding>& g,
                                                 Distance metric);

// Prints the pairwise matrix of the task Gaussians stored in a checkpoint.
int cmd_distances(const std::filesystem::path& checkpoint, const std::string& metric, std::ostream& out,
                  std::ostream& err);

}  // namespace fcil::cli
