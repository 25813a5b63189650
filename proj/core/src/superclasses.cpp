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
#include <array>
#include <string>

#include "fcil/data.hpp"
#include "fcil/error.hpp"

namespace fcil::data {

namespace {

constexpr std::array<Superclass, 20> kSuperclasses = {{
    {"aquatic mammals", {"beaver", "dolphin", "otter", "seal", "whale"}},
    {"fish", {"aquarium_fish", "flatfish", "ray", "shark", "trout"}},
    {"flowers", {"orchid", "poppy", "rose", "sunflower", "tulip"}},
    {"food containers", {"bottle", "bowl", "can", "cup", "plate"}},
    {"fruit and vegetables", {"apple", "mushroom", "orange", "pear", "sweet_pepper"}},
    {"household electrical devices", {"clock", "keyboard", "lamp", "telephone", "television"}},
    {"household furniture", {"bed", "chair", "couch", "table", "wardrobe"}},
    {"insects", {"bee", "beetle", "butterfly", "caterpillar", "cockroach"}},
    {"large carnivores", {"bear", "leopard", "lion", "tiger", "wolf"}},
    {"large man-made outdoor things", {"bridge", "castle", "house", "road", "skyscraper"}},
    {"large natural outdoor scenes", {"cloud", "forest", "mountain", "plain", "sea"}},
    {"large omnivores and herbivores", {"camel", "cattle", "chimpanzee", "elephant", "kangaroo"}},
    {"medium-sized mammals", {"fox", "porcupine", "possum", "raccoon", "skunk"}},
    {"non-insect invertebrates", {"crab", "lobster", "snail", "spider", "worm"}},
    {"people", {"baby", "boy", "girl", "man", "woman"}},
    {"reptiles", {"crocodile", "dinosaur", "lizard", "snake", "turtle"}},
    {"small mammals", {"hamster", "mouse", "rabbit", "shrew", "squirrel"}},
    {"trees", {"maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"}},
    {"vehicles 1", {"bicycle", "bus", "motorcycle", "pickup_truck", "train"}},
    {"vehicles 2", {"lawn_mower", "rocket", "streetcar", "tank", "tractor"}},
}};

// Alphabetical, as in the dataset's meta file.
constexpr std::array<std::string_view, 100> kFineNames = {
    "apple",        "aquarium_fish", "baby",        "bear",       "beaver",
    "bed",          "bee",           "beetle",      "bicycle",    "bottle",
    "bowl",         "boy",           "bridge",      "bus",        "butterfly",
    "camel",        "can",           "castle",      "caterpillar", "cattle",
    "chair",        "chimpanzee",    "clock",       "cloud",      "cockroach",
    "couch",        "crab",          "crocodile",   "cup",        "dinosaur",
    "dolphin",      "elephant",      "flatfish",    "forest",     "fox",
    "girl",         "hamster",       "house",       "kangaroo",   "keyboard",
    "lamp",         "lawn_mower",    "leopard",     "lion",       "lizard",
    "lobster",      "man",           "maple_tree",  "motorcycle", "mountain",
    "mouse",        "mushroom",      "oak_tree",    "orange",     "orchid",
    "otter",        "palm_tree",     "pear",        "pickup_truck", "pine_tree",
    "plain",        "plate",         "poppy",       "porcupine",  "possum",
    "rabbit",       "raccoon",       "ray",         "road",       "rocket",
    "rose",         "sea",           "seal",        "shark",      "shrew",
    "skunk",        "skyscraper",    "snail",       "snake",      "spider",
    "squirrel",     "streetcar",     "sunflower",   "sweet_pepper", "table",
    "tank",         "telephone",     "television",  "tiger",      "tractor",
    "train",        "trout",         "tulip",       "turtle",     "wardrobe",
    "whale",        "willow_tree",   "wolf",        "woman",      "worm",
};

}  // namespace

std::span<const Superclass> superclass_table() { return kSuperclasses; }

std::span<const std::string_view> cifar100_fine_names() { return kFineNames; }

std::vector<int> fine_to_coarse() {
  std::vector<int> map(kFineNames.size(), -1);
  for (std::size_t coarse = 0; coarse < kSuperclasses.size(); ++coarse) {
    for (std::string_view name : kSuperclasses[coarse].classes) {
      const auto it = std::find(kFineNames.begin(), kFineNames.end(), name);
      if (it == kFineNames.end()) throw FormatError("superclass table names unknown class " + std::string(name));
      map[static_cast<std::size_t>(it - kFineNames.begin())] = static_cast<int>(coarse);
    }
  }
  return map;
}

}  // namespace fcil::data
