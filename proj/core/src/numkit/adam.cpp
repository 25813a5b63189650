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

#include "fcil/numkit/adam.hpp"

#include <cmath>
#include <string>

#include "fcil/error.hpp"

namespace fcil::numkit {

double l2_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("l2_distance: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return std::sqrt(total);
}

void AdamState::ensure_size(std::size_t n) {
  if (m_.empty() && t_ == 0) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  if (m_.size() != n) {
    throw DimensionError("adam: state holds " + std::to_string(m_.size()) +
                         " moments, step got " + std::to_string(n) + " parameters");
  }
}

void AdamState::update(std::span<double> params, std::span<const double> grads,
                       std::size_t offset) {
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads.empty() ? 0.0 : grads[i];
    double& m = m_[offset + i];
    double& v = v_[offset + i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    params[i] -= config_.lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
  }
}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients");
  }
  ensure_size(params.size());
  ++t_;
  update(params, grads, 0);
}

void AdamState::step(std::span<Tensor> params) {
  std::size_t total = 0;
  for (const Tensor& p : params) total += p.numel();
  ensure_size(total);
  ++t_;
  std::size_t offset = 0;
  for (Tensor& p : params) {
    update(p.mutable_data(), p.grad(), offset);
    offset += p.numel();
  }
}

ParamVector adam_step(const ParamVector& params, const ParamVector& grads, AdamState& state) {
  ParamVector next = params;
  state.step(next.values(), grads.values());
  return next;
}

}  // namespace fcil::numkit
