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

#include "fcil/numkit/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "fcil/error.hpp"

namespace fcil::numkit {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  check_finite("tensor constructor", data);
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw UsageError("use of an undefined tensor");
  if (node_->backward) throw UsageError("mutable_data on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw UsageError("use of an undefined tensor");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, BackwardFn backward) {
  if (shape_numel(shape) != value.size()) {
    throw DimensionError(std::string(op) + ": result shape " + shape_string(shape) +
                         " does not match value count");
  }
  check_finite(op, value);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

std::span<double> grad_buffer(const Tensor& t) {
  auto& node = *t.node();
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

std::vector<std::shared_ptr<detail::Node>> record_order(const Tensor& root) {
  std::vector<std::shared_ptr<detail::Node>> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS; the recursion depth of a deep graph would
  // otherwise follow the network depth times the number of steps.
  struct Frame {
    std::shared_ptr<detail::Node> node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_input < top.node->inputs.size()) {
      const Tensor& in = top.node->inputs[top.next_input++];
      if (in.requires_grad() && visited.insert(in.node().get()).second) {
        stack.push_back({in.node(), 0});
      }
      continue;
    }
    order.push_back(top.node);
    stack.pop_back();
  }
  return order;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto order = record_order(loss);
  grad_buffer(loss)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.backward) continue;
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
    node.backward(node.grad);
  }
  for (auto& node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace fcil::numkit
