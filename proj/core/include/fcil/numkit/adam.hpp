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
#include <span>
#include <vector>

#include "fcil/numkit/param_vector.hpp"
#include "fcil/numkit/tensor.hpp"

namespace fcil::numkit {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are sized by the first step and
// every later step must present the same parameter layout.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  void step(std::span<double> params, std::span<const double> grads);

  // Tensor-list form; a parameter without an accumulated gradient is
  // treated as having a zero gradient.
  void step(std::span<Tensor> params);

 private:
  void ensure_size(std::size_t n);
  void update(std::span<double> params, std::span<const double> grads, std::size_t offset);

  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

ParamVector adam_step(const ParamVector& params, const ParamVector& grads, AdamState& state);

}  // namespace fcil::numkit
