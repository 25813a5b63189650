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

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fcil/binary_io.hpp"
#include "fcil/data.hpp"
#include "fcil/error.hpp"

using namespace fcil;
using namespace fcil::data;

namespace {

std::vector<std::uint8_t> cifar10_record(std::uint8_t label, std::uint8_t fill) {
  std::vector<std::uint8_t> rec(kCifar10RecordBytes, fill);
  rec[0] = label;
  return rec;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fcil_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cifar10 record parsing") {
  SUBCASE("count") {
    std::vector<std::uint8_t> bytes;
    for (int i = 0; i < 10000; ++i) {
      const auto rec = cifar10_record(static_cast<std::uint8_t>(i % 10), static_cast<std::uint8_t>(i));
      bytes.insert(bytes.end(), rec.begin(), rec.end());
    }
    const auto set = parse_cifar10(bytes, Split::kTrain);
    CHECK(set.size() == 10000);
    CHECK(set.pixels.size() == 10000u * 3072u);
    CHECK(set.labels[123] == 3);
  }
  SUBCASE("all-zero pixels map to -1") {
    const auto set = parse_cifar10(cifar10_record(4, 0), Split::kTest);
    for (double v : set.image(0)) CHECK(v == -1.0);
    CHECK(set.split == Split::kTest);
  }
  SUBCASE("hand-built two-record fixture") {
    // Record 0: label 7, pixel p has byte p % 256 (R plane, then G, then B).
    // Record 1: label 0, red plane 255, green 0, blue 128.
    std::vector<std::uint8_t> bytes;
    bytes.push_back(7);
    for (int p = 0; p < 3072; ++p) bytes.push_back(static_cast<std::uint8_t>(p % 256));
    bytes.push_back(0);
    for (int p = 0; p < 1024; ++p) bytes.push_back(255);
    for (int p = 0; p < 1024; ++p) bytes.push_back(0);
    for (int p = 0; p < 1024; ++p) bytes.push_back(128);
    const auto set = parse_cifar10(bytes, Split::kTrain);
    REQUIRE(set.size() == 2);
    CHECK(set.labels == std::vector<int>{7, 0});
    CHECK(set.image(0)[0] == -1.0);
    CHECK(set.image(0)[255] == 1.0);
    CHECK(set.image(0)[1024 + 5] == 5.0 / 127.5 - 1.0);
    // channel 2, row 3, column 4
    CHECK(set.image(0)[2048 + 3 * 32 + 4] == static_cast<double>((2048 + 100) % 256) / 127.5 - 1.0);
    CHECK(set.image(1)[0] == 1.0);
    CHECK(set.image(1)[1024] == -1.0);
    CHECK(set.image(1)[2048] == 128.0 / 127.5 - 1.0);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t p = 0; p < 3072; ++p)
        CHECK(denormalize_pixel(set.image(i)[p]) == bytes[i * kCifar10RecordBytes + 1 + p]);
  }
  SUBCASE("errors") {
    auto rec = cifar10_record(1, 9);
    rec.pop_back();
    CHECK_THROWS_AS(parse_cifar10(rec, Split::kTrain), FormatError);
    CHECK_THROWS_AS(parse_cifar10(cifar10_record(10, 0), Split::kTrain), FormatError);
  }
}

TEST_CASE("cifar100 record parsing") {
  std::vector<std::uint8_t> bytes(2 * kCifar100RecordBytes, 50);
  bytes[0] = 19;
  bytes[1] = 99;
  bytes[kCifar100RecordBytes] = 0;
  bytes[kCifar100RecordBytes + 1] = 4;
  const auto set = parse_cifar100(bytes, Split::kTrain);
  CHECK(set.coarse_labels == std::vector<int>{19, 0});
  CHECK(set.labels == std::vector<int>{99, 4});
  CHECK(set.image(1)[0] == 50.0 / 127.5 - 1.0);
  bytes[0] = 20;
  CHECK_THROWS_AS(parse_cifar100(bytes, Split::kTrain), FormatError);
  bytes[0] = 0;
  bytes[1] = 100;
  CHECK_THROWS_AS(parse_cifar100(bytes, Split::kTrain), FormatError);
}

TEST_CASE("normalisation round-trips every byte") {
  for (int v = 0; v < 256; ++v) {
    const double x = normalize_byte(static_cast<std::uint8_t>(v));
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
    CHECK(denormalize_pixel(x) == v);
  }
}

TEST_CASE("directory loaders verify record counts") {
  const auto dir = temp_dir("cifar_counts");
  std::vector<std::uint8_t> one = cifar10_record(3, 1);
  io::write_file(dir / "test_batch.bin", one);
  CHECK_THROWS_AS(load_cifar10(dir, Split::kTest), FormatError);
  CHECK_THROWS_AS(load_cifar10(dir, Split::kTrain), FormatError);
  CHECK_THROWS_AS(load_cifar100(dir, Split::kTest), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("superclass table") {
  const auto table = superclass_table();
  REQUIRE(table.size() == 20);
  const auto map = fine_to_coarse();
  REQUIRE(map.size() == 100);
  std::vector<int> per_coarse(20, 0);
  for (int c : map) {
    REQUIRE(c >= 0);
    ++per_coarse[static_cast<std::size_t>(c)];
  }
  for (int count : per_coarse) CHECK(count == 5);

  auto coarse_of = [&](std::string_view name) {
    const auto names = cifar100_fine_names();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return map[i];
    return -1;
  };
  CHECK(table[0].name == "aquatic mammals");
  CHECK(coarse_of("dolphin") == 0);
  CHECK(coarse_of("whale") == 0);
  CHECK(coarse_of("trout") == 1);
  CHECK(coarse_of("orchid") == 2);
  CHECK(coarse_of("keyboard") == 5);
  CHECK(coarse_of("wardrobe") == 6);
  CHECK(coarse_of("cockroach") == 7);
  CHECK(coarse_of("skyscraper") == 9);
  CHECK(coarse_of("kangaroo") == 11);
  CHECK(coarse_of("woman") == 14);
  CHECK(coarse_of("willow_tree") == 17);
  CHECK(coarse_of("pickup_truck") == 18);
  CHECK(coarse_of("tractor") == 19);
  CHECK(table[19].name == "vehicles 2");
}

TEST_CASE("blobs") {
  SUBCASE("size and determinism") {
    BlobSpec spec{.num_classes = 4, .per_class = 50, .seed = 3};
    const auto a = make_blobs(spec, Split::kTrain);
    CHECK(a.size() == 200);
    CHECK(a.pixels == make_blobs(spec, Split::kTrain).pixels);
    CHECK(a.pixels != make_blobs(spec, Split::kTest).pixels);
    for (double v : a.pixels) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("well separated raw blobs are nearest-centroid separable") {
    BlobSpec spec{.num_classes = 4, .per_class = 200, .shape = {1, 1, 2}, .separation = 10.0,
                  .seed = 11, .render = false};
    const auto train = make_blobs(spec, Split::kTrain);
    const auto test = make_blobs(spec, Split::kTest);
    // Centroids estimated from the training sample, not read from the generator.
    std::vector<std::array<double, 2>> centroid(4, {0.0, 0.0});
    for (std::size_t i = 0; i < train.size(); ++i) {
      centroid[static_cast<std::size_t>(train.labels[i])][0] += train.image(i)[0] / 200.0;
      centroid[static_cast<std::size_t>(train.labels[i])][1] += train.image(i)[1] / 200.0;
    }
    int correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < 4; ++c) {
        const double dx = test.image(i)[0] - centroid[static_cast<std::size_t>(c)][0];
        const double dy = test.image(i)[1] - centroid[static_cast<std::size_t>(c)][1];
        if (dx * dx + dy * dy < best_d) {
          best_d = dx * dx + dy * dy;
          best = c;
        }
      }
      correct += best == test.labels[i];
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) >= 0.99);
  }
  SUBCASE("centres are pairwise at least the separation apart") {
    for (std::size_t dim : {2u, 64u}) {
      BlobSpec spec{.num_classes = 6, .shape = {1, 1, dim}, .separation = 4.0, .seed = 5};
      const auto c = blob_centres(spec);
      for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = i + 1; j < c.size(); ++j) {
          double d = 0.0;
          for (std::size_t k = 0; k < dim; ++k) d += (c[i][k] - c[j][k]) * (c[i][k] - c[j][k]);
          CHECK(std::sqrt(d) >= 4.0 - 1e-9);
        }
    }
  }
  SUBCASE("invalid separation") {
    CHECK_THROWS_AS(make_blobs(BlobSpec{.separation = 0.0}, Split::kTrain), UsageError);
  }
}

TEST_CASE("image set fixture format round-trips") {
  auto set = make_blobs(BlobSpec{.num_classes = 3, .per_class = 4, .seed = 9}, Split::kTest);
  set.coarse_labels = std::vector<int>(set.size(), 1);
  const auto bytes = serialize_image_set(set);
  const auto back = deserialize_image_set(bytes);
  CHECK(back.shape == set.shape);
  CHECK(back.labels == set.labels);
  CHECK(back.coarse_labels == set.coarse_labels);
  CHECK(back.pixels == set.pixels);
  CHECK(back.split == Split::kTest);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(deserialize_image_set(cut), FormatError);
}

TEST_CASE("parsing time is linear in input size") {
  auto seconds = [](std::size_t records) {
    std::vector<std::uint8_t> bytes(records * kCifar10RecordBytes, 7);
    for (std::size_t i = 0; i < records; ++i) bytes[i * kCifar10RecordBytes] = 1;
    double best = 1e9;
    for (int round = 0; round < 3; ++round) {
      const auto start = std::chrono::steady_clock::now();
      const auto set = parse_cifar10(bytes, Split::kTrain);
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
      CHECK(set.size() == records);
      best = std::min(best, dt.count());
    }
    return best;
  };
  const double small = seconds(2000), large = seconds(8000);
  MESSAGE("2000 records: " << small << " s, 8000 records: " << large << " s");
  CHECK(large / small <= 8.0);
}

TEST_CASE("full CIFAR files when available") {
  const char* dir10 = std::getenv("FCIL_CIFAR10_DIR");
  const char* dir100 = std::getenv("FCIL_CIFAR100_DIR");
  if (dir10) {
    CHECK(load_cifar10(dir10, Split::kTrain).size() == 50000);
    CHECK(load_cifar10(dir10, Split::kTest).size() == 10000);
  }
  if (dir100) {
    const auto train = load_cifar100(dir100, Split::kTrain);
    CHECK(train.size() == 50000);
    const auto map = fine_to_coarse();
    for (std::size_t i = 0; i < train.size(); ++i)
      CHECK(train.coarse_labels[i] == map[static_cast<std::size_t>(train.labels[i])]);
  }
  if (!dir10 && !dir100) MESSAGE("FCIL_CIFAR10_DIR / FCIL_CIFAR100_DIR not set; skipped");
}
