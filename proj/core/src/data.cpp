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

#include <algorithm>
#include <cmath>
#include <string>

#include "fcil/binary_io.hpp"
#include "fcil/data.hpp"
#include "fcil/error.hpp"
#include "fcil/rng.hpp"

namespace fcil::data {

namespace {

constexpr std::size_t kCifarTrainCount = 50000;
constexpr std::size_t kCifarTestCount = 10000;
constexpr std::size_t kPixelBytes = 3072;

LabeledImageSet parse_records(std::span<const std::uint8_t> bytes, Split split,
                              std::size_t label_bytes, const char* what) {
  const std::size_t record = label_bytes + kPixelBytes;
  if (bytes.size() % record != 0) {
    throw FormatError(std::string(what) + ": truncated data (" + std::to_string(bytes.size()) +
                      " bytes is not a whole number of " + std::to_string(record) +
                      "-byte records)");
  }
  const std::size_t n = bytes.size() / record;
  LabeledImageSet set;
  set.shape = kCifarShape;
  set.split = split;
  set.labels.resize(n);
  if (label_bytes == 2) set.coarse_labels.resize(n);
  set.pixels.resize(n * kPixelBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    if (label_bytes == 1) {
      if (rec[0] > 9) {
        throw FormatError(std::string(what) + ": label " + std::to_string(rec[0]) +
                          " out of range in record " + std::to_string(i));
      }
      set.labels[i] = rec[0];
    } else {
      if (rec[0] > 19 || rec[1] > 99) {
        throw FormatError(std::string(what) + ": labels (" + std::to_string(rec[0]) + ", " +
                          std::to_string(rec[1]) + ") out of range in record " +
                          std::to_string(i));
      }
      set.coarse_labels[i] = rec[0];
      set.labels[i] = rec[1];
    }
    double* dst = set.pixels.data() + i * kPixelBytes;
    for (std::size_t p = 0; p < kPixelBytes; ++p) dst[p] = normalize_byte(rec[label_bytes + p]);
  }
  return set;
}

void append(LabeledImageSet& into, LabeledImageSet&& part) {
  into.pixels.insert(into.pixels.end(), part.pixels.begin(), part.pixels.end());
  into.labels.insert(into.labels.end(), part.labels.begin(), part.labels.end());
  into.coarse_labels.insert(into.coarse_labels.end(), part.coarse_labels.begin(),
                            part.coarse_labels.end());
}

void expect_count(const LabeledImageSet& set, Split split, const char* what) {
  const std::size_t expected = split == Split::kTrain ? kCifarTrainCount : kCifarTestCount;
  if (set.size() != expected) {
    throw FormatError(std::string(what) + ": expected " + std::to_string(expected) +
                      " records, found " + std::to_string(set.size()));
  }
}

}  // namespace

std::uint8_t denormalize_pixel(double x) {
  const double v = std::round((x + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

LabeledImageSet parse_cifar10(std::span<const std::uint8_t> bytes, Split split) {
  return parse_records(bytes, split, 1, "cifar10");
}

LabeledImageSet parse_cifar100(std::span<const std::uint8_t> bytes, Split split) {
  return parse_records(bytes, split, 2, "cifar100");
}

LabeledImageSet load_cifar10(const std::filesystem::path& dir, Split split) {
  LabeledImageSet set;
  set.shape = kCifarShape;
  set.split = split;
  if (split == Split::kTrain) {
    for (int b = 1; b <= 5; ++b) {
      const auto bytes = io::read_file(dir / ("data_batch_" + std::to_string(b) + ".bin"));
      append(set, parse_cifar10(bytes, split));
    }
  } else {
    append(set, parse_cifar10(io::read_file(dir / "test_batch.bin"), split));
  }
  expect_count(set, split, "cifar10");
  return set;
}

LabeledImageSet load_cifar100(const std::filesystem::path& dir, Split split) {
  const auto bytes = io::read_file(dir / (split == Split::kTrain ? "train.bin" : "test.bin"));
  auto set = parse_cifar100(bytes, split);
  expect_count(set, split, "cifar100");
  return set;
}

std::vector<std::vector<double>> blob_centres(const BlobSpec& spec) {
  const std::size_t dim = spec.shape.numel();
  const std::size_t k = spec.num_classes;
  std::vector<std::vector<double>> centres(k, std::vector<double>(dim, 0.0));
  Rng rng(derive_seed(spec.seed, {0xb10b}));
  if (k <= dim) {
    // Gram-Schmidt on Gaussian directions; pairwise distance of
    // (s / sqrt 2) * orthonormal vectors is exactly s.
    const double radius = spec.separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < k; ++c) {
      auto& v = centres[c];
      for (;;) {
        for (double& x : v) x = rng.normal();
        for (std::size_t prev = 0; prev < c; ++prev) {
          double dot = 0.0;
          for (std::size_t i = 0; i < dim; ++i) dot += v[i] * centres[prev][i] / radius;
          for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * centres[prev][i] / radius;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
          for (double& x : v) x *= radius / norm;
          break;
        }
      }
    }
  } else {
    // Lattice with spacing s over the first axes, shuffled across classes.
    std::size_t side = 1;
    while (static_cast<std::size_t>(std::pow(static_cast<double>(side), static_cast<double>(dim))) < k) ++side;
    std::vector<std::size_t> cells(static_cast<std::size_t>(std::pow(static_cast<double>(side), static_cast<double>(dim))));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    rng.shuffle(cells.begin(), cells.end());
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t cell = cells[c];
      for (std::size_t axis = 0; axis < dim; ++axis) {
        centres[c][axis] = spec.separation * static_cast<double>(cell % side);
        cell /= side;
      }
    }
  }
  return centres;
}

LabeledImageSet make_blobs(const BlobSpec& spec, Split split) {
  if (!(spec.separation > 0.0)) throw UsageError("make_blobs: separation must be positive");
  if (spec.num_classes == 0 || spec.shape.numel() == 0) {
    throw UsageError("make_blobs: need at least one class and a non-empty shape");
  }
  const auto centres = blob_centres(spec);
  const std::size_t dim = spec.shape.numel();
  LabeledImageSet set;
  set.shape = spec.shape;
  set.split = split;
  set.labels.reserve(spec.num_classes * spec.per_class);
  set.pixels.reserve(spec.num_classes * spec.per_class * dim);
  Rng rng(derive_seed(spec.seed, {split == Split::kTrain ? 1u : 2u}));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      set.labels.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = centres[c][j] + spec.noise * rng.normal();
        set.pixels.push_back(spec.render ? std::tanh(v / spec.separation) : v);
      }
    }
  }
  return set;
}

std::vector<std::uint8_t> serialize_image_set(const LabeledImageSet& set) {
  io::ByteWriter w;
  w.bytes("FCILIMGS");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(set.shape.channels));
  w.u32(static_cast<std::uint32_t>(set.shape.height));
  w.u32(static_cast<std::uint32_t>(set.shape.width));
  w.u8(set.split == Split::kTrain ? 0 : 1);
  w.u8(set.coarse_labels.empty() ? 0 : 1);
  w.u64(set.size());
  for (int y : set.labels) w.i32(y);
  for (int y : set.coarse_labels) w.i32(y);
  w.f64s(set.pixels);
  return w.buffer();
}

LabeledImageSet deserialize_image_set(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(8) != "FCILIMGS") throw FormatError("image set: bad magic");
  if (r.u32() != 1) throw FormatError("image set: unsupported version");
  LabeledImageSet set;
  set.shape.channels = r.u32();
  set.shape.height = r.u32();
  set.shape.width = r.u32();
  set.split = r.u8() == 0 ? Split::kTrain : Split::kTest;
  const bool coarse = r.u8() != 0;
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("image set: count exceeds data");
  set.labels.resize(n);
  for (auto& y : set.labels) y = r.i32();
  if (coarse) {
    set.coarse_labels.resize(n);
    for (auto& y : set.coarse_labels) y = r.i32();
  }
  set.pixels.resize(n * set.shape.numel());
  r.f64s(set.pixels);
  if (!r.done()) throw FormatError("image set: trailing bytes");
  return set;
}

}  // namespace fcil::data
