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
#include <span>
#include <vector>

#include "fcil/data.hpp"
#include "fcil/models.hpp"
#include "fcil/numkit/adam.hpp"
#include "fcil/numkit/ops.hpp"

namespace fcil::client {

using models::ClientModel;
using numkit::ClassMask;
using numkit::ParamVector;
using numkit::Tensor;

struct ClientConfig {
  std::size_t local_iterations = 100;
  std::size_t batch_size = 64;
  std::size_t replay_batch_size = 64;
  numkit::AdamConfig adam{};
  // When false the class head sees a zero, gradient-free task embedding.
  bool use_cate = true;
};

struct ClientState {
  std::size_t client_id = 0;
  ClientModel model;
  // Local training shard for the current task.
  data::LabeledImageSet shard;
  std::vector<int> current_classes;
  // Sorted union of all classes seen so far, current task included.
  std::vector<int> seen_classes;
  // Class sets of every task begun so far, in order.
  std::vector<std::vector<int>> task_classes;

  // Appends a new task's classes and installs its shard. Throws UsageError if
  // a class was already seen or a shard label is outside the task.
  void begin_task(std::span<const int> classes, data::LabeledImageSet task_shard);
  ClassMask seen_mask() const;
  // Index into task_classes of the task holding class c; throws UsageError if unseen.
  std::size_t task_of(int c) const;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  ParamVector params;
  std::size_t num_examples = 0;
};

// Per-iteration loss values of the last executed iteration, for diagnostics.
struct TrainTrace {
  double d_real = 0.0, d_fake = 0.0, g = 0.0, replay = 0.0;
};

// One round of local AC-GAN + CATE training from global_params.
ClientUpdate local_train_round(ClientState& state, const ParamVector& global_params,
                               const ClientConfig& config, std::uint64_t seed,
                               TrainTrace* trace = nullptr);

// Same trajectory with (mu/2)·||θ − global||² added to every loss.
ClientUpdate local_train_round_prox(ClientState& state, const ParamVector& global_params,
                                    double mu, const ClientConfig& config, std::uint64_t seed,
                                    TrainTrace* trace = nullptr);

// Images [n, C, H, W] for the given rows of a set.
Tensor make_batch(const data::LabeledImageSet& set, std::span<const std::size_t> rows);

// Task embedding of a batch, or a constant zero vector when CATE is disabled.
Tensor task_embedding(const ClientModel& model, const Tensor& images, bool use_cate);

// Fraction of rows whose argmax over admitted logits equals the label.
double accuracy_from_logits(std::span<const double> logits, std::size_t classes,
                            std::span<const int> labels, const ClassMask& mask);

// Test accuracy, embedding each evaluation batch with the model's own CATE.
double evaluate(const ClientModel& model, const data::LabeledImageSet& test, const ClassMask& mask,
                bool use_cate = true, std::size_t batch_size = 64);

// Labels drawn uniformly from classes.
std::vector<int> sample_labels(std::span<const int> classes, std::size_t n, Rng& rng);

}  // namespace fcil::client
