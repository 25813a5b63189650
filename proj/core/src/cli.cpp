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


#include "fcil/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "fcil/error.hpp"
#include "fcil/metrics.hpp"
#include "fcil/server_runtime.hpp"

namespace fcil::cli {

namespace fs = std::filesystem;
using orchestrator::FederationConfig;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

const std::string* last_value(const KeyValues& kv, const std::string& key) {
  const std::string* found = nullptr;
  for (const auto& [k, v] : kv)
    if (k == key) found = &v;
  return found;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path.string());
  f << text;
  if (!f) throw UsageError("write failed for " + path.string());
}

// Highest-numbered task_<n>.ckpt in dir, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  std::size_t best_n = 0;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("task_", 0) != 0 || entry.path().extension() != ".ckpt") continue;
    const auto digits = name.substr(5, name.size() - 5 - 5);
    std::size_t n = 0;
    const auto [p, e] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (e != std::errc() || p != digits.data() + digits.size()) continue;
    if (!best || n > best_n) {
      best = entry.path();
      best_n = n;
    }
  }
  return best;
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

KeyValues parse_config_text(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

KeyValues read_config_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::vector<std::uint64_t> parse_seeds(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  while (true) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    std::uint64_t v = 0;
    const auto [p, e] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || e != std::errc() || p != item.data() + item.size()) {
      throw ConfigError("seeds: expected a comma-separated list of non-negative integers, got '" +
                        std::string(item) + "'");
    }
    seeds.push_back(v);
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return seeds;
}

KeyValues RunConfigFile::entries() const {
  KeyValues kv = config.entries();
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  kv.emplace_back("seeds", s);
  kv.emplace_back("out", out.string());
  if (!paths.cifar10.empty()) kv.emplace_back("cifar10_dir", paths.cifar10.string());
  if (!paths.cifar100.empty()) kv.emplace_back("cifar100_dir", paths.cifar100.string());
  return kv;
}

RunConfigFile resolve_run(const KeyValues& file, const KeyValues& flags) {
  auto pick = [&](const std::string& key) {
    const std::string* v = last_value(flags, key);
    return v ? v : last_value(file, key);
  };
  const auto* seq_text = pick("sequence");
  const auto sequence = seq_text ? orchestrator::parse_sequence(*seq_text) : orchestrator::SequenceId::kToy;
  const auto* scale_text = pick("scale");
  const auto scale = scale_text ? orchestrator::parse_scale(*scale_text)
                                : (sequence == orchestrator::SequenceId::kToy ? orchestrator::Scale::kToy
                                                                             : orchestrator::Scale::kFull);
  RunConfigFile run;
  run.config = FederationConfig::defaults(sequence, scale);
  for (const KeyValues* layer : {&file, &flags}) {
    for (const auto& [k, v] : *layer) {
      if (k == "seeds") run.seeds = parse_seeds(v);
      else if (k == "out") run.out = v;
      else if (k == "cifar10_dir") run.paths.cifar10 = v;
      else if (k == "cifar100_dir") run.paths.cifar100 = v;
      else if (k == "ablate") {
        std::string_view rest = v;
        while (!rest.empty()) {
          const auto comma = rest.find(',');
          const auto name = trim(rest.substr(0, comma));
          if (!name.empty()) run.config.ablate.enable(std::string(name));
          rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
      } else if (k == "sequence" || k == "scale") {
        continue;  // already applied through defaults()
      } else {
        run.config.set(k, v);
      }
    }
  }
  if (run.out.empty()) throw ConfigError("out must not be empty");
  if (run.seeds.empty()) run.seeds = {run.config.master_seed};
  run.config.validate();
  return run;
}

int cmd_run(const RunConfigFile& run, const std::optional<fs::path>& resume, std::ostream& out,
            std::ostream& err) {
  try {
    run.config.validate();
    if (resume && fs::is_regular_file(*resume) && run.seeds.size() != 1) {
      throw ConfigError("resuming from a single checkpoint file needs exactly one seed");
    }
    if (resume && !fs::exists(*resume)) throw ConfigError("resume path " + resume->string() + " does not exist");
    fs::create_directories(run.out);

    std::string echo = "# fcil run configuration\n";
    for (const auto& [k, v] : run.entries()) echo += k + " = " + v + "\n";
    write_text(run.out / "run.cfg", echo);
    write_text(run.out / "manifest.json", orchestrator::manifest_json(run.config, run.seeds));

    std::vector<metrics::MetricsRow> rows;
    std::ostringstream dump;
    std::optional<orchestrator::Dataset> shared;  // CIFAR data does not depend on the seed
    const std::string method = orchestrator::to_string(run.config.method);
    const std::string sequence = orchestrator::to_string(run.config.sequence);
    for (std::size_t s = 0; s < run.seeds.size(); ++s) {
      auto cfg = run.config;
      cfg.master_seed = run.seeds[s];
      std::optional<orchestrator::Dataset> local;
      const orchestrator::Dataset* data = nullptr;
      if (cfg.sequence == orchestrator::SequenceId::kToy) {
        local = orchestrator::load_dataset(cfg, run.paths);
        data = &*local;
      } else {
        if (!shared) shared = orchestrator::load_dataset(cfg, run.paths);
        data = &*shared;
      }
      orchestrator::RunOptions opt;
      opt.checkpoint_dir = run.out / "checkpoints" / seed_dir_name(cfg.master_seed);
      opt.log = [&err, seed = cfg.master_seed](const std::string& line) {
        err << "[seed " << seed << "] " << line << "\n";
      };
      if (resume) {
        if (fs::is_regular_file(*resume)) {
          opt.resume_from = *resume;
        } else {
          opt.resume_from = latest_checkpoint(*resume / "checkpoints" / seed_dir_name(cfg.master_seed));
        }
      }
      const auto result = orchestrator::run_experiment(cfg, *data, opt);
      // forgetting is undefined for a single task
      metrics::MetricsRow row{cfg.master_seed, method, sequence, metrics::average_accuracy(result.record),
                              result.record.tasks() >= 2 ? metrics::average_forgetting(result.record)
                                                         : std::numeric_limits<double>::quiet_NaN()};
      out << "seed " << row.seed << ": avg_accuracy " << metrics::format_double(row.avg_accuracy)
          << " avg_forgetting " << metrics::format_double(row.avg_forgetting) << "\n";
      rows.push_back(row);
      metrics::write_accuracy_dump(dump, cfg.master_seed, method, sequence, result.record, s == 0);
    }
    std::ostringstream csv;
    metrics::write_metrics_csv(csv, rows);
    write_text(run.out / "metrics.csv", csv.str());
    write_text(run.out / "accuracy_dump.csv", dump.str());
    out << "wrote " << (run.out / "metrics.csv").string() << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

std::vector<ReportRow> summarize(const std::vector<metrics::MetricsRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.method, r.sequence}];
    g.first.push_back(r.avg_accuracy);
    g.second.push_back(r.avg_forgetting);
  }
  std::vector<ReportRow> out;
  for (const auto& [key, values] : groups) {
    out.push_back({key.first, key.second, values.first.size(), metrics::mean_sd(values.first),
                   metrics::mean_sd(values.second)});
  }
  return out;
}

int cmd_report(const std::vector<fs::path>& inputs, const std::optional<fs::path>& csv_out,
               std::ostream& out, std::ostream& err) {
  try {
    if (inputs.empty()) throw ConfigError("report needs at least one run directory or metrics file");
    std::vector<metrics::MetricsRow> rows;
    for (const auto& in : inputs) {
      const fs::path file = fs::is_directory(in) ? in / "metrics.csv" : in;
      std::ifstream f(file);
      if (!f) throw ConfigError("missing metrics file " + file.string());
      const auto got = metrics::read_metrics_csv(f);
      rows.insert(rows.end(), got.begin(), got.end());
    }
    if (rows.empty()) throw ConfigError("no completed runs in the given metrics files");
    const auto table = summarize(rows);
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-16s %5s  %-20s %-20s\n", "method", "sequence", "seeds",
                  "avg_accuracy", "avg_forgetting");
    out << line;
    for (const auto& r : table) {
      char acc[64], fgt[64];
      std::snprintf(acc, sizeof acc, "%.4f ± %.4f", r.accuracy.mean, r.accuracy.sd);
      std::snprintf(fgt, sizeof fgt, "%.4f ± %.4f", r.forgetting.mean, r.forgetting.sd);
      std::snprintf(line, sizeof line, "%-10s %-16s %5zu  %-21s %-21s\n", r.method.c_str(), r.sequence.c_str(),
                    r.seeds, acc, fgt);
      out << line;
    }
    if (csv_out) {
      std::ostringstream csv;
      csv << "# fcil-report v1\n"
          << "method,sequence,seeds,avg_accuracy_mean,avg_accuracy_sd,avg_forgetting_mean,avg_forgetting_sd\n";
      for (const auto& r : table) {
        csv << r.method << ',' << r.sequence << ',' << r.seeds << ',' << metrics::format_double(r.accuracy.mean)
            << ',' << metrics::format_double(r.accuracy.sd) << ',' << metrics::format_double(r.forgetting.mean)
            << ',' << metrics::format_double(r.forgetting.sd) << "\n";
      }
      write_text(*csv_out, csv.str());
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "report: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "report: " << e.what() << "\n";
    return kExitFailure;
  }
}

Distance parse_distance(const std::string& name) {
  if (name == "w2") return Distance::kW2;
  if (name == "kl") return Distance::kKl;
  if (name == "bhat") return Distance::kBhattacharyya;
  throw ConfigError("unknown distance '" + name + "' (w2, kl, bhat)");
}

std::vector<std::vector<double>> distance_matrix(const std::vector<geometry::GaussianEmbedding>& g,
                                                 Distance metric) {
  std::vector<std::vector<double>> m(g.size(), std::vector<double>(g.size(), 0.0));
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (i == j) continue;  // zero by definition; computing it only adds rounding noise
      switch (metric) {
        case Distance::kW2: m[i][j] = geometry::w2_squared(g[i], g[j]); break;
        case Distance::kKl: m[i][j] = geometry::kl_divergence(g[i], g[j]); break;
        case Distance::kBhattacharyya: m[i][j] = geometry::bhattacharyya(g[i], g[j]); break;
      }
    }
  }
  return m;
}

int cmd_distances(const fs::path& checkpoint, const std::string& metric, std::ostream& out, std::ostream& err) {
  try {
    const auto which = parse_distance(metric);
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint " + checkpoint.string() + " does not exist");
    const auto saved = server::load_server_checkpoint(checkpoint);
    if (saved.gaussians.size() < 2) {
      throw ConfigError("checkpoint holds " + std::to_string(saved.gaussians.size()) +
                        " task Gaussian(s); distances need at least two");
    }
    const auto m = distance_matrix(saved.gaussians, which);
    out << "# " << (which == Distance::kW2 ? "squared 2-Wasserstein" : which == Distance::kKl ? "KL(row || column)"
                                                                                              : "Bhattacharyya")
        << " between task Gaussians\n";
    out << "task";
    for (std::size_t j = 0; j < m.size(); ++j) out << ',' << j;
    out << "\n";
    for (std::size_t i = 0; i < m.size(); ++i) {
      out << i;
      for (double v : m[i]) out << ',' << metrics::format_double(v);
      out << "\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "distances: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "distances: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "distances: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fcil::cli
