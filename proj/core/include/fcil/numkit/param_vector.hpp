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
#include <span>
#include <vector>

namespace fcil::numkit {

// Flat, ordered copy of a model's trainable parameters. The order is fixed by
// the owning model's parameter listing; two vectors are compatible when their
// sizes agree.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  static ParamVector zeros(std::size_t n) { return ParamVector(std::vector<double>(n, 0.0)); }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

// Euclidean distance between two compatible vectors.
double l2_distance(const ParamVector& a, const ParamVector& b);

}  // namespace fcil::numkit
