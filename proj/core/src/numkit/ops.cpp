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

#include "fcil/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "fcil/error.hpp"
#include "fcil/numkit/gemm.hpp"

namespace fcil::numkit {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

bool recording(const Tensor& a) { return grad_enabled() && a.requires_grad(); }

// f maps x to (y, dy/dx). The derivative is kept only while recording.
template <typename F>
Tensor unary(const char* op, const Tensor& a, F f) {
  const auto x = a.data();
  const std::size_t n = x.size();
  std::vector<double> y(n);
  const bool rec = recording(a);
  std::vector<double> d(rec ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [yi, di] = f(x[i]);
    y[i] = yi;
    if (rec) d[i] = di;
  }
  return make_op_result(op, a.shape(), std::move(y), {a},
                        [a, d = std::move(d)](std::span<const double> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d[i];
                        });
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView as_rows(const char* op, const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " +
                       shape_string(t.shape()));
}

void check_mask(const char* op, const ClassMask& mask, std::size_t classes) {
  if (mask.empty()) return;
  if (mask.size() != classes) {
    throw DimensionError(std::string(op) + ": mask size " + std::to_string(mask.size()) +
                         " vs " + std::to_string(classes) + " classes");
  }
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw UsageError(std::string(op) + ": mask admits no class");
  }
}

inline bool admitted(const ClassMask& mask, std::size_t c) { return mask.empty() || mask[c]; }

// Softmax of one row over admitted classes; masked entries set to 0.
// Returns log of the normaliser.
double softmax_row(const double* z, double* p, std::size_t c, const ClassMask& mask) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c; ++j)
    if (admitted(mask, j)) zmax = std::max(zmax, z[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = admitted(mask, j) ? std::exp(z[j] - zmax) : 0.0;
    total += p[j];
  }
  for (std::size_t j = 0; j < c; ++j) p[j] /= total;
  return zmax + std::log(total);
}

void im2col(const double* src, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, double* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * out_w + ox] = inside ? src[(c * h + iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, double* dst) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[(c * h + iy) * w + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g) {
                          for (const Tensor* t : {&a, &b}) {
                            if (!wants_grad(*t)) continue;
                            auto gt = grad_buffer(*t);
                            for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g) {
                          if (wants_grad(a)) {
                            auto ga = grad_buffer(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (wants_grad(b)) {
                            auto gb = grad_buffer(b);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g) {
                          const auto x = a.data(), y = b.data();
                          if (wants_grad(a)) {
                            auto ga = grad_buffer(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                          }
                          if (wants_grad(b)) {
                            auto gb = grad_buffer(b);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                          }
                        });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return std::pair{x * factor, factor}; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return std::pair{x + offset, 1.0}; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return std::pair{x * x, 2.0 * x}; });
}

Tensor sqrt(const Tensor& a) {
  return unary("sqrt", a, [](double x) {
    const double y = std::sqrt(x);
    return std::pair{y, 0.5 / y};
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) {
    const double y = std::exp(x);
    return std::pair{y, y};
  });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::pair{std::log(x), 1.0 / x}; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? std::pair{x, 1.0} : std::pair{0.0, 0.0}; });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  return unary("leaky_relu", a, [negative_slope](double x) {
    return x > 0.0 ? std::pair{x, 1.0} : std::pair{negative_slope * x, negative_slope};
  });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) {
    const double y = std::tanh(x);
    return std::pair{y, 1.0 - y * y};
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) {
    const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::pair{y, y * (1.0 - y)};
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op_result("sum", {1}, {total}, {a}, [a](std::span<const double> g) {
    auto ga = grad_buffer(a);
    for (double& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op_result("mean", {1}, {total / static_cast<double>(n)}, {a},
                        [a, n](std::span<const double> g) {
                          auto ga = grad_buffer(a);
                          const double share = g[0] / static_cast<double>(n);
                          for (double& v : ga) v += share;
                        });
}

Tensor mean_rows(const Tensor& a) {
  require_rank("mean_rows", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows == 0) throw DimensionError("mean_rows of a tensor with no rows");
  const auto x = a.data();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
  for (double& v : out) v /= static_cast<double>(rows);
  return make_op_result("mean_rows", {cols}, std::move(out), {a},
                        [a, rows, cols](std::span<const double> g) {
                          auto ga = grad_buffer(a);
                          const double inv = 1.0 / static_cast<double>(rows);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] * inv;
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_accumulate(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  return make_op_result("matmul", {m, n}, std::move(out), {a, b},
                        [a, b, m, n, k](std::span<const double> g) {
                          if (wants_grad(a))
                            gemm_accumulate(false, true, m, k, n, g.data(), b.data().data(),
                                            grad_buffer(a).data());
                          if (wants_grad(b))
                            gemm_accumulate(true, false, k, n, m, a.data().data(), g.data(),
                                            grad_buffer(b).data());
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  require_rank("linear", bias, 1);
  const std::size_t rows = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_f) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  std::vector<double> out(rows * out_f);
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_f));
  gemm_accumulate(false, true, rows, out_f, in, x.data().data(), weight.data().data(), out.data());
  return make_op_result(
      "linear", {rows, out_f}, std::move(out), {x, weight, bias},
      [x, weight, bias, rows, in, out_f](std::span<const double> g) {
        if (wants_grad(x))
          gemm_accumulate(false, false, rows, in, out_f, g.data(), weight.data().data(),
                          grad_buffer(x).data());
        if (wants_grad(weight))
          gemm_accumulate(true, false, out_f, in, rows, g.data(), x.data().data(),
                          grad_buffer(weight).data());
        if (wants_grad(bias)) {
          auto gb = grad_buffer(bias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
        }
      });
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  require_rank("broadcast_rows", v, 1);
  const std::size_t cols = v.dim(0);
  const auto x = v.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  return make_op_result("broadcast_rows", {rows, cols}, std::move(out), {v},
                        [v, rows, cols](std::span<const double> g) {
                          auto gv = grad_buffer(v);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
                        });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) require_rank("concat", p, 2);
  const std::size_t other = axis == 0 ? 1 : 0;
  const std::size_t fixed = parts[0].dim(other);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.dim(other) != fixed) {
      throw DimensionError("concat: mismatched " + shape_string(parts[0].shape()) + " and " +
                           shape_string(p.shape()));
    }
    total += p.dim(axis);
  }
  const Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(shape_numel(out_shape));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  if (axis == 0) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += p.numel();
    }
  } else {
    std::size_t col0 = 0;
    for (const Tensor& p : parts) {
      const std::size_t w = p.dim(1);
      const auto x = p.data();
      for (std::size_t r = 0; r < fixed; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * total + col0 + c] = x[r * w + c];
      col0 += w;
    }
  }
  return make_op_result("concat", out_shape, std::move(out), inputs,
                        [inputs, axis, fixed, total](std::span<const double> g) {
                          std::size_t offset = 0;
                          for (const Tensor& p : inputs) {
                            const std::size_t w = p.dim(1);
                            if (wants_grad(p)) {
                              auto gp = grad_buffer(p);
                              if (axis == 0) {
                                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                              } else {
                                for (std::size_t r = 0; r < fixed; ++r)
                                  for (std::size_t c = 0; c < w; ++c)
                                    gp[r * w + c] += g[r * total + offset + c];
                              }
                            }
                            offset += axis == 0 ? p.numel() : w;
                          }
                        });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank("gather_rows", a, 2);
  const std::size_t n = a.dim(0), cols = a.dim(1);
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  for (std::size_t r : picked)
    if (r >= n) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
  const auto x = a.data();
  std::vector<double> out(picked.size() * cols);
  for (std::size_t i = 0; i < picked.size(); ++i)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(picked[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  return make_op_result("gather_rows", {picked.size(), cols}, std::move(out), {a},
                        [a, picked, cols](std::span<const double> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < picked.size(); ++i)
                            for (std::size_t c = 0; c < cols; ++c)
                              ga[picked[i] * cols + c] += g[i * cols + c];
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  const auto x = a.data();
  return make_op_result("reshape", std::move(shape), std::vector<double>(x.begin(), x.end()), {a},
                        [a](std::span<const double> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

Tensor softmax(const Tensor& logits, const ClassMask& mask) {
  const auto [rows, c] = as_rows("softmax", logits);
  check_mask("softmax", mask, c);
  const auto z = logits.data();
  std::vector<double> p(z.size());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(z.data() + r * c, p.data() + r * c, c, mask);
  std::vector<double> saved = recording(logits) ? p : std::vector<double>{};
  return make_op_result("softmax", logits.shape(), std::move(p), {logits},
                        [logits, saved, rows, c](std::span<const double> g) {
                          auto gz = grad_buffer(logits);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* y = saved.data() + r * c;
                            const double* gr = g.data() + r * c;
                            double dot = 0.0;
                            for (std::size_t j = 0; j < c; ++j) dot += y[j] * gr[j];
                            for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += y[j] * (gr[j] - dot);
                          }
                        });
}

Tensor log_softmax(const Tensor& logits, const ClassMask& mask) {
  const auto [rows, c] = as_rows("log_softmax", logits);
  check_mask("log_softmax", mask, c);
  const auto z = logits.data();
  std::vector<double> p(z.size());
  std::vector<double> out(z.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = softmax_row(z.data() + r * c, p.data() + r * c, c, mask);
    for (std::size_t j = 0; j < c; ++j)
      if (admitted(mask, j)) out[r * c + j] = z[r * c + j] - lse;
  }
  return make_op_result("log_softmax", logits.shape(), std::move(out), {logits},
                        [logits, p = std::move(p), mask, rows, c](std::span<const double> g) {
                          auto gz = grad_buffer(logits);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double gsum = 0.0;
                            for (std::size_t j = 0; j < c; ++j)
                              if (admitted(mask, j)) gsum += g[r * c + j];
                            for (std::size_t j = 0; j < c; ++j)
                              if (admitted(mask, j))
                                gz[r * c + j] += g[r * c + j] - p[r * c + j] * gsum;
                          }
                        });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  require_rank("conv2d", bias, 1);
  const std::size_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_c = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != in_c || weight.dim(3) != k || bias.dim(0) != out_c) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  if (stride == 0 || h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " does not fit input " +
                         shape_string(x.shape()));
  }
  const std::size_t out_h = (h + 2 * padding - k) / stride + 1;
  const std::size_t out_w = (w + 2 * padding - k) / stride + 1;
  const std::size_t patch = in_c * k * k, plane = out_h * out_w;
  const std::size_t in_size = in_c * h * w, out_size = out_c * plane;
  std::vector<double> out(n * out_size);
  std::vector<double> cols(patch * plane);
  const auto xv = x.data(), wv = weight.data(), bv = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    double* dst = out.data() + s * out_size;
    for (std::size_t o = 0; o < out_c; ++o) std::fill_n(dst + o * plane, plane, bv[o]);
    im2col(xv.data() + s * in_size, in_c, h, w, k, stride, padding, out_h, out_w, cols.data());
    gemm_accumulate(false, false, out_c, plane, patch, wv.data(), cols.data(), dst);
  }
  return make_op_result(
      "conv2d", {n, out_c, out_h, out_w}, std::move(out), {x, weight, bias},
      [=](std::span<const double> g) {
        const auto xv = x.data(), wv = weight.data();
        std::vector<double> cols(patch * plane);
        std::vector<double> dcols(patch * plane);
        for (std::size_t s = 0; s < n; ++s) {
          const double* gs = g.data() + s * out_size;
          if (wants_grad(weight)) {
            im2col(xv.data() + s * in_size, in_c, h, w, k, stride, padding, out_h, out_w,
                   cols.data());
            gemm_accumulate(false, true, out_c, patch, plane, gs, cols.data(),
                            grad_buffer(weight).data());
          }
          if (wants_grad(x)) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            gemm_accumulate(true, false, patch, plane, out_c, wv.data(), gs, dcols.data());
            col2im(dcols.data(), in_c, h, w, k, stride, padding, out_h, out_w,
                   grad_buffer(x).data() + s * in_size);
          }
          if (wants_grad(bias)) {
            auto gb = grad_buffer(bias);
            for (std::size_t o = 0; o < out_c; ++o)
              for (std::size_t p = 0; p < plane; ++p) gb[o] += gs[o * plane + p];
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding) {
  require_rank("conv_transpose2d", x, 4);
  require_rank("conv_transpose2d", weight, 4);
  require_rank("conv_transpose2d", bias, 1);
  const std::size_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_c = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != in_c || weight.dim(3) != k || bias.dim(0) != out_c) {
    throw DimensionError("conv_transpose2d: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  if (stride == 0 || (h - 1) * stride + k <= 2 * padding || (w - 1) * stride + k <= 2 * padding) {
    throw DimensionError("conv_transpose2d: empty output for input " + shape_string(x.shape()));
  }
  const std::size_t out_h = (h - 1) * stride + k - 2 * padding;
  const std::size_t out_w = (w - 1) * stride + k - 2 * padding;
  const std::size_t patch = out_c * k * k, plane = h * w, out_plane = out_h * out_w;
  const std::size_t in_size = in_c * plane, out_size = out_c * out_plane;
  std::vector<double> out(n * out_size);
  std::vector<double> cols(patch * plane);
  const auto xv = x.data(), wv = weight.data(), bv = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    double* dst = out.data() + s * out_size;
    for (std::size_t o = 0; o < out_c; ++o) std::fill_n(dst + o * out_plane, out_plane, bv[o]);
    std::fill(cols.begin(), cols.end(), 0.0);
    gemm_accumulate(true, false, patch, plane, in_c, wv.data(), xv.data() + s * in_size,
                    cols.data());
    col2im(cols.data(), out_c, out_h, out_w, k, stride, padding, h, w, dst);
  }
  return make_op_result(
      "conv_transpose2d", {n, out_c, out_h, out_w}, std::move(out), {x, weight, bias},
      [=](std::span<const double> g) {
        const auto xv = x.data(), wv = weight.data();
        std::vector<double> gcols(patch * plane);
        for (std::size_t s = 0; s < n; ++s) {
          const double* gs = g.data() + s * out_size;
          im2col(gs, out_c, out_h, out_w, k, stride, padding, h, w, gcols.data());
          if (wants_grad(x))
            gemm_accumulate(false, false, in_c, plane, patch, wv.data(), gcols.data(),
                            grad_buffer(x).data() + s * in_size);
          if (wants_grad(weight))
            gemm_accumulate(false, true, in_c, patch, plane, xv.data() + s * in_size,
                            gcols.data(), grad_buffer(weight).data());
          if (wants_grad(bias)) {
            auto gb = grad_buffer(bias);
            for (std::size_t o = 0; o < out_c; ++o)
              for (std::size_t p = 0; p < out_plane; ++p) gb[o] += gs[o * out_plane + p];
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n * c; ++i) {
    double total = 0.0;
    for (std::size_t p = 0; p < plane; ++p) total += xv[i * plane + p];
    out[i] = total / static_cast<double>(plane);
  }
  return make_op_result("global_avg_pool", {n, c}, std::move(out), {x},
                        [x, n, c, plane](std::span<const double> g) {
                          auto gx = grad_buffer(x);
                          const double inv = 1.0 / static_cast<double>(plane);
                          for (std::size_t i = 0; i < n * c; ++i)
                            for (std::size_t p = 0; p < plane; ++p) gx[i * plane + p] += g[i] * inv;
                        });
}

Tensor bce_with_logits(const Tensor& logits, double target) {
  const auto z = logits.data();
  const std::size_t n = z.size();
  if (n == 0) throw DimensionError("bce_with_logits of an empty tensor");
  double total = 0.0;
  for (double v : z) total += std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::abs(v)));
  return make_op_result("bce_with_logits", {1}, {total / static_cast<double>(n)}, {logits},
                        [logits, target, n](std::span<const double> g) {
                          auto gz = grad_buffer(logits);
                          const auto z = logits.data();
                          const double share = g[0] / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            const double s = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                                         : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                            gz[i] += share * (s - target);
                          }
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, const ClassMask& mask) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t rows = logits.dim(0), c = logits.dim(1);
  if (labels.size() != rows || rows == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  check_mask("cross_entropy", mask, c);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c || !admitted(mask, static_cast<std::size_t>(y))) {
      throw UsageError("cross_entropy: label " + std::to_string(y) + " is not an admitted class");
    }
  }
  const auto z = logits.data();
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = softmax_row(z.data() + r * c, p.data() + r * c, c, mask);
    total += lse - z[r * c + static_cast<std::size_t>(labels[r])];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return make_op_result("cross_entropy", {1}, {total / static_cast<double>(rows)}, {logits},
                        [logits, p = std::move(p), ys = std::move(ys), rows, c](std::span<const double> g) {
                          auto gz = grad_buffer(logits);
                          const double share = g[0] / static_cast<double>(rows);
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += share * p[r * c + j];
                            gz[r * c + static_cast<std::size_t>(ys[r])] -= share;
                          }
                        });
}

Tensor kl_divergence_to_teacher(std::span<const double> teacher_probs, const Tensor& student_logits,
                                const ClassMask& mask) {
  require_rank("kl_divergence_to_teacher", student_logits, 2);
  const std::size_t rows = student_logits.dim(0), c = student_logits.dim(1);
  if (teacher_probs.size() != rows * c || rows == 0) {
    throw DimensionError("kl_divergence_to_teacher: teacher has " +
                         std::to_string(teacher_probs.size()) + " entries for student " +
                         shape_string(student_logits.shape()));
  }
  check_mask("kl_divergence_to_teacher", mask, c);
  const auto z = student_logits.data();
  std::vector<double> q(z.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = softmax_row(z.data() + r * c, q.data() + r * c, c, mask);
    for (std::size_t j = 0; j < c; ++j) {
      const double pt = teacher_probs[r * c + j];
      if (!admitted(mask, j) || pt <= 0.0) continue;
      total += pt * (std::log(pt) - (z[r * c + j] - lse));
    }
  }
  std::vector<double> teacher(teacher_probs.begin(), teacher_probs.end());
  return make_op_result(
      "kl_divergence_to_teacher", {1}, {total / static_cast<double>(rows)}, {student_logits},
      [student_logits, teacher = std::move(teacher), q = std::move(q), mask, rows,
       c](std::span<const double> g) {
        auto gz = grad_buffer(student_logits);
        const double share = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          double mass = 0.0;
          for (std::size_t j = 0; j < c; ++j)
            if (admitted(mask, j)) mass += teacher[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            if (admitted(mask, j))
              gz[r * c + j] += share * (q[r * c + j] * mass - teacher[r * c + j]);
        }
      });
}

}  // namespace fcil::numkit
