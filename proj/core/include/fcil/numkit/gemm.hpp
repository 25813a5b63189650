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

namespace fcil::numkit {

// C += op(A) * op(B) for row-major matrices, op = transpose when the flag is
// set. op(A) is M x K, op(B) is K x N, C is M x N.
void gemm_accumulate(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);

}  // namespace fcil::numkit
