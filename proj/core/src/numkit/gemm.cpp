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

#include "fcil/numkit/gemm.hpp"

#include <cblas.h>

#include <mutex>

namespace fcil::numkit {

void gemm_accumulate(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  // Clients run on their own threads; a threaded BLAS underneath would also
  // make reduction order depend on the thread count.
  static std::once_flag single_threaded;
  std::call_once(single_threaded, [] { openblas_set_num_threads(1); });
  const auto lda = static_cast<blasint>(trans_a ? m : k);
  const auto ldb = static_cast<blasint>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), 1.0, a, lda, b, ldb, 1.0, c,
              static_cast<blasint>(n));
}

}  // namespace fcil::numkit
