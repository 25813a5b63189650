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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcil/checkpoint.hpp"
#include "fcil/client_runtime.hpp"
#include "fcil/gaussian.hpp"
#include "fcil/models.hpp"

namespace fcil::server {

using client::ClientUpdate;
using models::ClientModel;
using numkit::ClassMask;
using numkit::ParamVector;
using numkit::Tensor;

struct ServerLossWeights {
  double alpha = 0.3;  // distillation
  double beta = 0.3;   // inverse pairwise task separation
  double gamma = 0.4;  // anchor
  bool all_zero() const { return alpha == 0.0 && beta == 0.0 && gamma == 0.0; }
};

// Count-weighted average of client parameters.
ParamVector aggregate(std::span<const ClientUpdate> updates);

// Splits total in proportion to counts by largest-remainder rounding; ties go
// to the lower index. The result always sums to total.
std::vector<std::size_t> proportional_budgets(std::span<const std::size_t> counts, std::size_t total);

// Generated replay set A_T, partitioned by task.
struct SynthesizedDataset {
  data::ImageShape shape;
  std::vector<double> pixels;  // [n, C, H, W]
  std::vector<int> labels;
  std::vector<std::size_t> source_client;
  // class id -> task index, -1 for classes not yet seen.
  std::vector<int> class_to_task;
  // Row indices of each task's subset.
  std::vector<std::vector<std::size_t>> task_rows;

  std::size_t size() const { return labels.size(); }
  std::size_t num_tasks() const { return task_rows.size(); }
  Tensor images(std::span<const std::size_t> rows) const;
  Tensor all_images() const;
};

// Client k generates budgets[k] images with labels uniform over seen_classes.
SynthesizedDataset synthesize_replay(std::span<const models::Generator* const> generators,
                                     std::span<const std::size_t> budgets,
                                     std::span<const int> seen_classes,
                                     std::span<const int> class_to_task, std::uint64_t seed);

// Mean over the batch of KL(teacher || student) on the class head. The
// student softmax runs over student_mask; teacher probabilities (precomputed)
// are zero outside the teacher's classes. With detach_embedding the task
// embedding enters as a constant, so no distillation gradient reaches CATE.
Tensor kd_loss(std::span<const double> teacher_probs, const ClientModel& student, const Tensor& images,
               const ClassMask& student_mask, bool use_cate, bool detach_embedding = false);
// Teacher class-head probabilities over mask, no gradient.
std::vector<double> teacher_probabilities(const ClientModel& teacher, const Tensor& images,
                                          const ClassMask& mask, bool use_cate);

// Floor applied to the pairwise sum before taking the reciprocal.
inline constexpr double kSeparationFloor = 1e-4;

// Per-task Gaussians of CATE outputs on A_T.
std::vector<geometry::GaussianEmbedding> task_gaussians(const models::CateEncoder& cate,
                                                        const SynthesizedDataset& replay);
// Σ_{i<j} W2² between the per-task Gaussians, full closed form.
double pairwise_w2_sum(const models::CateEncoder& cate, const SynthesizedDataset& replay);

// 1 / max(Σ_{i<j} W2², floor). The value uses the exact distance; the gradient
// of the covariance term comes from the diagonal (per-dimension std) form.
// Zero when fewer than two tasks are present.
Tensor wasserstein_loss(const models::CateEncoder& cate, const SynthesizedDataset& replay);

// sqrt(||θ − anchor||² + 1e-12) over the concatenation of params.
Tensor anchor_loss(std::span<const Tensor> params, std::span<const double> anchor);

struct ConsolidationConfig {
  ServerLossWeights weights{};
  std::size_t steps = 50;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  bool use_cate = true;
  // Classes known to the previous global model (teacher support).
  ClassMask previous_mask;
  // Student softmax support; empty means previous_mask.
  ClassMask student_mask;
  // Let distillation gradients flow into CATE through the task embedding.
  bool kd_through_cate = false;
};

struct ConsolidationTrace {
  double kd = 0.0, wasserstein = 0.0, anchor = 0.0;
};

// Adam on α·KD + β·W + γ·anchor starting from the anchor.
ParamVector consolidate(const models::ArchConfig& arch, const ParamVector& anchor,
                        const std::optional<ParamVector>& prev_global,
                        const SynthesizedDataset& replay, const ConsolidationConfig& config,
                        std::uint64_t seed, ConsolidationTrace* trace = nullptr);

struct ServerCheckpoint {
  std::size_t round = 0;
  std::size_t task = 0;
  models::ArchConfig arch;
  ParamVector global;
  std::vector<geometry::GaussianEmbedding> gaussians;
  // Additional entries carried along verbatim.
  models::Checkpoint extra;
};

models::Checkpoint to_checkpoint(const ServerCheckpoint& s);
ServerCheckpoint from_checkpoint(const models::Checkpoint& ckpt);
void save_server_checkpoint(const std::filesystem::path& path, const ServerCheckpoint& s);
ServerCheckpoint load_server_checkpoint(const std::filesystem::path& path);

}  // namespace fcil::server
