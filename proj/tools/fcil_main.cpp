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


// fcil: run, report and inspect federated class-incremental experiments.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fcil/cli.hpp"
#include "fcil/error.hpp"
#include "fcil/version.hpp"

namespace {

using fcil::cli::KeyValues;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated class-incremental learning simulator"};
  app.set_version_flag("--version", std::string(fcil::kVersion));
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "train one method over a list of seeds");
  std::string config_path, method, sequence, seeds, scale, out, resume;
  std::vector<std::string> ablate, sets;
  run->add_option("--config", config_path, "key = value configuration file");
  run->add_option("--method", method, "fedgtea | fedavg | fedprox");
  run->add_option("--sequence", sequence, "cifar10 | cifar100-icarl | cifar100-super | toy");
  run->add_option("--seeds", seeds, "comma-separated master seeds");
  run->add_option("--ablate", ablate, "no_cate | no_wasserstein | no_anchor | no_distillation")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  run->add_option("--scale", scale, "toy | full");
  run->add_option("--out", out, "output directory");
  run->add_option("--resume", resume, "checkpoint file or earlier output directory");
  run->add_option("--set", sets, "extra key=value override (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // report
  auto* report = app.add_subcommand("report", "mean and sd per method and sequence");
  std::vector<std::string> inputs;
  std::string report_csv;
  report->add_option("inputs", inputs, "run directories or metrics.csv files")->required();
  report->add_option("--csv", report_csv, "also write the table as CSV");

  // distances
  auto* distances = app.add_subcommand("distances", "pairwise distances between stored task Gaussians");
  std::string checkpoint, metric = "w2";
  distances->add_option("checkpoint", checkpoint, "server checkpoint (task_<n>.ckpt)")->required();
  distances->add_option("--metric", metric, "w2 | kl | bhat");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fcil::cli::kExitConfig;
  }

  if (*run) {
    fcil::cli::RunConfigFile resolved;
    try {
      KeyValues file;
      if (!config_path.empty()) file = fcil::cli::read_config_file(config_path);
      KeyValues flags;
      if (!method.empty()) flags.emplace_back("method", method);
      if (!sequence.empty()) flags.emplace_back("sequence", sequence);
      if (!scale.empty()) flags.emplace_back("scale", scale);
      if (!seeds.empty()) flags.emplace_back("seeds", seeds);
      if (!out.empty()) flags.emplace_back("out", out);
      for (const auto& a : ablate) flags.emplace_back("ablate", a);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw fcil::ConfigError("--set expects key=value, got '" + s + "'");
        flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      resolved = fcil::cli::resolve_run(file, flags);
    } catch (const fcil::Error& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return fcil::cli::kExitConfig;
    }
    std::optional<std::filesystem::path> resume_path;
    if (!resume.empty()) resume_path = resume;
    return fcil::cli::cmd_run(resolved, resume_path, std::cout, std::cerr);
  }
  if (*report) {
    std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
    std::optional<std::filesystem::path> csv;
    if (!report_csv.empty()) csv = report_csv;
    return fcil::cli::cmd_report(paths, csv, std::cout, std::cerr);
  }
  return fcil::cli::cmd_distances(checkpoint, metric, std::cout, std::cerr);
}
