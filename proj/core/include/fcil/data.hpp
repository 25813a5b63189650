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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace fcil::data {

struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

inline constexpr ImageShape kCifarShape{3, 32, 32};

enum class Split { kTrain, kTest };

// Images stored channel-planar (C, H, W) per example, contiguous across
// examples, so a batch maps straight onto an NCHW tensor.
struct LabeledImageSet {
  ImageShape shape;
  std::vector<double> pixels;
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * shape.numel(), shape.numel());
  }
};

// v / 127.5 - 1
constexpr double normalize_byte(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }
std::uint8_t denormalize_pixel(double x);

inline constexpr std::size_t kCifar10RecordBytes = 1 + 3072;
inline constexpr std::size_t kCifar100RecordBytes = 2 + 3072;

// Raw record streams (one binary batch file's contents). FormatError on a
// trailing partial record or an out-of-range label.
LabeledImageSet parse_cifar10(std::span<const std::uint8_t> bytes, Split split);
LabeledImageSet parse_cifar100(std::span<const std::uint8_t> bytes, Split split);

// Standard binary distributions: data_batch_{1..5}.bin / test_batch.bin and
// train.bin / test.bin. Record counts are verified (50000 train, 10000 test).
LabeledImageSet load_cifar10(const std::filesystem::path& dir, Split split);
LabeledImageSet load_cifar100(const std::filesystem::path& dir, Split split);

struct Superclass {
  std::string_view name;
  std::array<std::string_view, 5> classes;  // CIFAR-100 fine label names
};

// The 20 CIFAR-100 superclasses in coarse-label order.
std::span<const Superclass> superclass_table();

// CIFAR-100 fine label names, indexed by label.
std::span<const std::string_view> cifar100_fine_names();

// Fine label -> coarse label, derived from superclass_table().
std::vector<int> fine_to_coarse();

// Isotropic Gaussian clusters, one per class. Class centres are pairwise
// `separation` apart (orthonormal directions when num_classes <= dim, a
// lattice otherwise) and depend only on `seed`; the split picks an
// independent sample stream.
struct BlobSpec {
  std::size_t num_classes = 4;
  std::size_t per_class = 100;
  ImageShape shape{1, 8, 8};
  double separation = 6.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  // true: squash coordinates into [-1, 1] pixels via tanh(v / separation);
  // false: keep raw coordinates.
  bool render = true;
};

LabeledImageSet make_blobs(const BlobSpec& spec, Split split);

// Class centres used by make_blobs, one row of dim() values per class.
std::vector<std::vector<double>> blob_centres(const BlobSpec& spec);

// Length-prefixed binary fixture format for image sets.
std::vector<std::uint8_t> serialize_image_set(const LabeledImageSet& set);
LabeledImageSet deserialize_image_set(std::span<const std::uint8_t> bytes);

}  // namespace fcil::data
