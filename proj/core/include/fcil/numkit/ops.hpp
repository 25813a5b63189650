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

#include "fcil/numkit/tensor.hpp"

namespace fcil::numkit {

// Per-class admission mask for the softmax family: entry c is nonzero when
// class c takes part. An empty mask admits every class.
using ClassMask = std::vector<std::uint8_t>;

// Elementwise, operands of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope = 0.2);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Reductions to a one-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [N, F] -> [F]: average over rows.
Tensor mean_rows(const Tensor& a);

// [M, K] x [K, N] -> [M, N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Fully connected layer: x [N, in], weight [out, in], bias [out] -> [N, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// [F] -> [rows, F], every row a copy of v.
Tensor broadcast_rows(const Tensor& v, std::size_t rows);

// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// Selected rows of a rank-2 tensor, in the given order.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

// Row-wise softmax over the last axis of a rank-1 or rank-2 tensor.
// Masked-out classes get probability exactly 0.
Tensor softmax(const Tensor& logits, const ClassMask& mask = {});
Tensor log_softmax(const Tensor& logits, const ClassMask& mask = {});

// Images are NCHW. weight [out_c, in_c, k, k], bias [out_c].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Adjoint of conv2d. weight [in_c, out_c, k, k], bias [out_c];
// output side (H - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding);

// [N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

// Mean binary cross-entropy of logits against a constant 0/1 target,
// computed in the overflow-safe form max(z,0) - z*t + log(1 + exp(-|z|)).
Tensor bce_with_logits(const Tensor& logits, double target);

// Mean cross-entropy over rows of logits [N, C] with integer labels; the
// softmax runs over the masked class set and labels must be admitted.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     const ClassMask& mask = {});

// Mean over rows of KL(teacher || softmax(student_logits)), teacher given as
// fixed probabilities [N, C] (rows sum to 1 over the mask).
Tensor kl_divergence_to_teacher(std::span<const double> teacher_probs,
                                const Tensor& student_logits, const ClassMask& mask = {});

}  // namespace fcil::numkit
