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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fcil/data.hpp"
#include "fcil/gaussian.hpp"
#include "fcil/metrics.hpp"
#include "fcil/models.hpp"
#include "fcil/server_runtime.hpp"

namespace fcil::orchestrator {

enum class Method { kFedGtea, kFedAvg, kFedProx };
enum class SequenceId { kCifar10, kCifar100Icarl, kCifar100Super, kToy };
enum class Scale { kToy, kFull };

std::string to_string(Method m);
std::string to_string(SequenceId s);
std::string to_string(Scale s);
// Throw ConfigError on unknown names.
Method parse_method(const std::string& s);
SequenceId parse_sequence(const std::string& s);
Scale parse_scale(const std::string& s);

struct Ablations {
  bool no_cate = false;
  bool no_wasserstein = false;
  bool no_anchor = false;
  bool no_distillation = false;
  // Accepts no_cate, no_wasserstein, no_anchor, no_distillation.
  void enable(const std::string& name);
};

struct FederationConfig {
  Method method = Method::kFedGtea;
  SequenceId sequence = SequenceId::kCifar10;
  Scale scale = Scale::kFull;
  std::size_t num_clients = 5;
  std::size_t rounds_per_task = 60;
  std::size_t local_iterations = 100;
  std::size_t batch_size = 64;
  double client_lr = 1e-4;
  double server_lr = 1e-4;
  std::size_t server_steps = 50;
  std::size_t server_batch_size = 64;
  server::ServerLossWeights weights{};
  Ablations ablate{};
  double prox_mu = 0.01;
  std::uint64_t master_seed = 0;
  std::size_t replay_per_class = 200;
  std::uint64_t class_order_seed = 1993;
  std::size_t embed_dim = 32;
  std::size_t workers = 1;

  // Synthetic blob sequence.
  std::size_t toy_classes = 4;
  std::size_t toy_tasks = 2;
  std::size_t toy_per_class = 100;
  std::size_t toy_test_per_class = 100;
  double toy_separation = 6.0;
  double toy_noise = 1.0;

  // Reference settings for the CIFAR sequences at full scale; reduced
  // settings for toy scale and the blob sequence.
  static FederationConfig defaults(SequenceId sequence, Scale scale);

  void validate() const;
  // Weights after method and ablation switches are applied.
  server::ServerLossWeights effective_weights() const;
  bool uses_cate() const;
  bool consolidates() const;

  // Flat key/value view, in a fixed order. set() rejects unknown keys.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void set(const std::string& key, const std::string& value);
};

struct Task {
  std::size_t id = 0;
  std::vector<int> classes;
};

struct TaskSequence {
  SequenceId id = SequenceId::kCifar10;
  std::size_t num_clients = 0;
  std::size_t num_classes = 0;
  std::vector<Task> tasks;
  // Seed of the shard split.
  std::uint64_t shard_seed = 0;

  std::vector<int> class_to_task() const;
  // Training rows of each client for task t: the task's rows shuffled and cut
  // into num_clients near-equal contiguous blocks.
  std::vector<std::vector<std::size_t>> client_shards(const data::LabeledImageSet& train,
                                                      std::size_t task) const;
};

// Sequence 1 and 2 orders come from a seeded shuffle of the class ids, the
// superclass sequence follows the table order, the blob sequence is in id order.
TaskSequence make_task_sequence(SequenceId id, const FederationConfig& config);

struct Dataset {
  data::LabeledImageSet train;
  data::LabeledImageSet test;
  std::size_t num_classes = 0;
};

struct DataPaths {
  std::filesystem::path cifar10;
  std::filesystem::path cifar100;
};

// Blobs are generated from the master seed; CIFAR sets are read from disk.
Dataset load_dataset(const FederationConfig& config, const DataPaths& paths);

models::ArchConfig make_arch(const FederationConfig& config, const data::ImageShape& image,
                             std::size_t num_classes);

data::LabeledImageSet subset(const data::LabeledImageSet& set, std::span<const std::size_t> rows);
std::vector<std::size_t> rows_of_classes(const data::LabeledImageSet& set, std::span<const int> classes);

struct RunOptions {
  // Per-task server checkpoints are written here when non-empty.
  std::filesystem::path checkpoint_dir;
  // Continue after the task boundary stored in this checkpoint.
  std::optional<std::filesystem::path> resume_from;
  // Stop after this many tasks (the record stays incomplete); 0 = all.
  std::size_t stop_after_tasks = 0;
  std::function<void(const std::string&)> log;
  // Called after each round with the new global parameters.
  std::function<void(std::size_t round, const numkit::ParamVector&)> on_round;
};

struct ExperimentResult {
  metrics::AccuracyRecord record;
  numkit::ParamVector final_global;
  std::vector<geometry::GaussianEmbedding> gaussians;
  std::vector<std::filesystem::path> checkpoints;
  std::size_t rounds_run = 0;
};

ExperimentResult run_experiment(const FederationConfig& config, const Dataset& dataset,
                                const RunOptions& options = {});

// Manifest: config echo, seeds, library version and code hash.
std::string manifest_json(const FederationConfig& config, const std::vector<std::uint64_t>& seeds,
                          const std::map<std::string, std::string>& extra = {});

}  // namespace fcil::orchestrator
