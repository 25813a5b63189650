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

#include "fcil/numkit/linalg.hpp"

namespace fcil::geometry {

using numkit::Matrix;

// Ridge added to every estimated covariance so the distances below always
// see strictly positive definite matrices, even when n - 1 < d.
inline constexpr double kCovarianceShrinkage = 1e-6;

// Tolerance on tiny negative distances produced by rounding; anything more
// negative is reported as a NumericError.
inline constexpr double kNegativeDistanceTolerance = 1e-8;

// Eigenvalues down to this (absolute) value are treated as rounding and
// clamped to zero before taking square roots.
inline constexpr double kPsdTolerance = 1e-6;

// N(mean, cov) summarising one task's embeddings.
struct GaussianEmbedding {
  std::vector<double> mean;
  Matrix cov;
  std::size_t sample_count = 1;

  std::size_t dim() const { return mean.size(); }
};

// Throws DimensionError / NumericError when the struct breaks its invariants
// (square covariance matching the mean, symmetric to 1e-9, PSD to -1e-9).
void validate(const GaussianEmbedding& g);

// Sample mean and unbiased (n - 1) covariance plus shrinkage * I.
// Throws EstimationError for fewer than two samples.
GaussianEmbedding estimate_gaussian(std::span<const std::vector<double>> samples,
                                    double shrinkage = kCovarianceShrinkage);

// Same, for samples stored as the rows of a row-major [n, d] buffer.
GaussianEmbedding estimate_gaussian(std::span<const double> rows, std::size_t n, std::size_t d,
                                    double shrinkage = kCovarianceShrinkage);

// Symmetric PSD square root V diag(sqrt(max(lambda, 0))) V^T.
Matrix psd_sqrt(const Matrix& a);

// ||mu_p - mu_q||^2 + tr(S_p + S_q - 2 (S_p^1/2 S_q S_p^1/2)^1/2).
double w2_squared(const GaussianEmbedding& p, const GaussianEmbedding& q);

// KL(p || q).
double kl_divergence(const GaussianEmbedding& p, const GaussianEmbedding& q);

double bhattacharyya(const GaussianEmbedding& p, const GaussianEmbedding& q);

}  // namespace fcil::geometry
