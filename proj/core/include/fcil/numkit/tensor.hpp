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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fcil::numkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}  // namespace detail

// Dense row-major array of doubles taking part in reverse-mode
// differentiation. A Tensor is a cheap handle: copies alias the same node.
//
// Leaves are created by the constructors below; every op output records its
// inputs and a backward rule when at least one input requires a gradient and
// gradient recording is enabled (see NoGradGuard).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values (parameter updates, fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  // Empty span until a gradient has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const { return !grad().empty(); }
  void zero_grad();

  // New leaf with a copy of the values and no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(std::span<const double>)>);

  std::shared_ptr<detail::Node> node_;
};

// Receives the gradient flowing into an op output and must accumulate the
// contributions into its inputs via grad_buffer().
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

// Builds an op output. Non-finite values raise NumericError naming `op`.
// The backward rule is dropped when no input needs a gradient.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, BackwardFn backward);

// Gradient accumulator of `t`, zero-initialised on first use.
std::span<double> grad_buffer(const Tensor& t);

// True when `t` should receive gradient contributions.
bool wants_grad(const Tensor& t);

// Populates grad of every reachable leaf that requires a gradient with
// d(loss)/d(leaf), accumulating into existing grads. The recorded graph is
// released afterwards. Throws UsageError for a non-scalar loss.
void backward(const Tensor& loss);

// Topologically ordered node list reachable from `root` (inputs before
// consumers). Exposed for inspection and tests.
std::vector<std::shared_ptr<detail::Node>> record_order(const Tensor& root);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

}  // namespace fcil::numkit
