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

#include "fcil/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fcil/error.hpp"

namespace fcil::geometry {

namespace {

void require_same_dim(const char* op, const GaussianEmbedding& p, const GaussianEmbedding& q) {
  if (p.dim() != q.dim() || p.cov.rows() != p.dim() || q.cov.rows() != q.dim()) {
    throw DimensionError(std::string(op) + ": dimensions " + std::to_string(p.dim()) + " and " +
                         std::to_string(q.dim()));
  }
}

// scale: magnitude of the terms that cancel, so rounding is judged relative to it.
double clamp_distance(const char* op, double value, double scale = 1.0) {
  if (!std::isfinite(value)) throw NumericError(std::string(op) + " is not finite");
  if (value >= 0.0) return value;
  if (value >= -kNegativeDistanceTolerance * std::max(1.0, scale)) return 0.0;
  throw NumericError(std::string(op) + " came out negative (" + std::to_string(value) + ")");
}

// Lower Cholesky factor; NumericError when a pivot is not positive.
Matrix cholesky(const Matrix& a, const char* op) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw NumericError(std::string(op) + ": covariance is singular");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

double log_det_from_cholesky(const Matrix& l) {
  double total = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) total += std::log(l(i, i));
  return 2.0 * total;
}

// Solves (L L^T) x = b in place.
void cholesky_solve(const Matrix& l, std::span<double> b) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * b[k];
    b[i] = s / l(i, i);
  }
}

// x^T (L L^T)^{-1} x
double mahalanobis_sq(const Matrix& l, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  cholesky_solve(l, y);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * y[i];
  return total;
}

std::vector<double> mean_difference(const GaussianEmbedding& p, const GaussianEmbedding& q) {
  std::vector<double> diff(p.dim());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p.mean[i] - q.mean[i];
  return diff;
}

}  // namespace

void validate(const GaussianEmbedding& g) {
  if (g.cov.rows() != g.dim() || g.cov.cols() != g.dim()) {
    throw DimensionError("gaussian: covariance does not match mean of dimension " +
                         std::to_string(g.dim()));
  }
  if (g.sample_count < 1) throw UsageError("gaussian: sample_count must be at least 1");
  if (g.cov.asymmetry() > 1e-9) throw NumericError("gaussian: covariance is not symmetric");
  const auto eig = numkit::sym_eig(g.cov);
  if (!eig.values.empty() && eig.values.front() < -1e-9) {
    throw NumericError("gaussian: covariance is not positive semi-definite");
  }
}

GaussianEmbedding estimate_gaussian(std::span<const double> rows, std::size_t n, std::size_t d,
                                    double shrinkage) {
  if (n < 2) {
    throw EstimationError("estimate_gaussian needs at least 2 samples, got " + std::to_string(n));
  }
  if (rows.size() != n * d) throw DimensionError("estimate_gaussian: buffer is not n x d");
  GaussianEmbedding g;
  g.sample_count = n;
  g.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.mean[j] += rows[i * d + j];
  for (double& m : g.mean) m /= static_cast<double>(n);
  g.cov = Matrix(d, d);
  std::vector<double> centred(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centred[j] = rows[i * d + j] - g.mean[j];
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = r; c < d; ++c) g.cov(r, c) += centred[r] * centred[c];
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r; c < d; ++c) {
      g.cov(r, c) *= inv;
      g.cov(c, r) = g.cov(r, c);
    }
    g.cov(r, r) += shrinkage;
  }
  return g;
}

GaussianEmbedding estimate_gaussian(std::span<const std::vector<double>> samples,
                                    double shrinkage) {
  if (samples.size() < 2) {
    throw EstimationError("estimate_gaussian needs at least 2 samples, got " +
                          std::to_string(samples.size()));
  }
  const std::size_t d = samples.front().size();
  std::vector<double> flat;
  flat.reserve(samples.size() * d);
  for (const auto& s : samples) {
    if (s.size() != d) {
      throw DimensionError("estimate_gaussian: sample of dimension " + std::to_string(s.size()) +
                           ", expected " + std::to_string(d));
    }
    flat.insert(flat.end(), s.begin(), s.end());
  }
  return estimate_gaussian(flat, samples.size(), d, shrinkage);
}

namespace {

// tolerance_scale > 1 loosens the PSD check for products whose rounding error
// grows with their norm.
Matrix psd_sqrt_scaled(const Matrix& a, double tolerance_scale) {
  auto eig = numkit::sym_eig(a);
  for (double& lambda : eig.values) {
    if (lambda < -kPsdTolerance * tolerance_scale) {
      throw NumericError("psd_sqrt: matrix is not positive semi-definite (eigenvalue " +
                         std::to_string(lambda) + ")");
    }
    lambda = std::sqrt(std::max(lambda, 0.0));
  }
  return numkit::reconstruct(eig);
}

}  // namespace

Matrix psd_sqrt(const Matrix& a) { return psd_sqrt_scaled(a, 1.0); }

double w2_squared(const GaussianEmbedding& p, const GaussianEmbedding& q) {
  require_same_dim("w2_squared", p, q);
  double mean_term = 0.0;
  for (double d : mean_difference(p, q)) mean_term += d * d;
  const Matrix root_p = psd_sqrt_scaled(p.cov, std::max(1.0, p.cov.frobenius_norm()));
  Matrix inner = root_p * q.cov * root_p;
  for (std::size_t r = 0; r < inner.rows(); ++r)
    for (std::size_t c = r + 1; c < inner.cols(); ++c) {
      const double avg = 0.5 * (inner(r, c) + inner(c, r));
      inner(r, c) = avg;
      inner(c, r) = avg;
    }
  const Matrix cross = psd_sqrt_scaled(inner, std::max(1.0, inner.frobenius_norm()));
  const double value = mean_term + p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
  return clamp_distance("w2_squared", value, p.cov.trace() + q.cov.trace());
}

double kl_divergence(const GaussianEmbedding& p, const GaussianEmbedding& q) {
  require_same_dim("kl_divergence", p, q);
  const std::size_t k = p.dim();
  const Matrix lq = cholesky(q.cov, "kl_divergence");
  const Matrix lp = cholesky(p.cov, "kl_divergence");
  // tr(S_q^-1 S_p), one column solve at a time.
  double trace_term = 0.0;
  std::vector<double> column(k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < k; ++r) column[r] = p.cov(r, c);
    cholesky_solve(lq, column);
    trace_term += column[c];
  }
  const double maha = mahalanobis_sq(lq, mean_difference(q, p));
  const double value = 0.5 * (trace_term + maha - static_cast<double>(k) +
                              log_det_from_cholesky(lq) - log_det_from_cholesky(lp));
  return clamp_distance("kl_divergence", value);
}

double bhattacharyya(const GaussianEmbedding& p, const GaussianEmbedding& q) {
  require_same_dim("bhattacharyya", p, q);
  const Matrix avg = 0.5 * (p.cov + q.cov);
  const Matrix l_avg = cholesky(avg, "bhattacharyya");
  const Matrix lp = cholesky(p.cov, "bhattacharyya");
  const Matrix lq = cholesky(q.cov, "bhattacharyya");
  const double maha = mahalanobis_sq(l_avg, mean_difference(p, q));
  const double log_ratio = log_det_from_cholesky(l_avg) -
                           0.5 * (log_det_from_cholesky(lp) + log_det_from_cholesky(lq));
  return clamp_distance("bhattacharyya", 0.125 * maha + 0.5 * log_ratio);
}

}  // namespace fcil::geometry
