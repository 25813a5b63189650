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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fcil/data.hpp"
#include "fcil/numkit/param_vector.hpp"
#include "fcil/numkit/tensor.hpp"
#include "fcil/rng.hpp"

namespace fcil::models {

using numkit::ParamVector;
using numkit::Tensor;

// Layer widths for the three networks. The full-size configuration keeps the
// reference channel lists; the scaled-down one divides them by 8 (min 4).
struct ArchConfig {
  data::ImageShape image{3, 32, 32};
  std::size_t num_classes = 10;
  std::size_t embed_dim = 32;
  std::size_t noise_dim = 100;
  std::vector<std::size_t> cate_hidden{256, 128};
  std::vector<std::size_t> disc_channels{16, 32, 64, 128, 256, 512};
  // One stride per conv layer; empty means derived from the image height.
  std::vector<std::size_t> disc_strides;
  // Projection width followed by the hidden transposed-conv widths. The last
  // stage always emits image.channels.
  std::vector<std::size_t> gen_channels{384, 192, 96, 48};
  double leaky_slope = 0.2;

  static ArchConfig full_size(data::ImageShape image, std::size_t num_classes);
  static ArchConfig scaled_down(data::ImageShape image, std::size_t num_classes);

  // Throws ConfigError on an unusable combination.
  void validate() const;
  std::vector<std::size_t> strides() const;
  std::size_t feature_dim() const { return disc_channels.back(); }

  std::map<std::string, std::string> to_header() const;
  static ArchConfig from_header(const std::map<std::string, std::string>& header);
  bool operator==(const ArchConfig&) const = default;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

// A flat list of named leaf tensors. Layers address their weights by index so
// that copies can be made deep without re-wiring members.
class ParamSet {
 public:
  std::span<const NamedParam> entries() const { return params_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  const Tensor& at(std::size_t i) const { return params_[i].value; }

  // Deep copy of all parameter values.
  void copy_values_from(const ParamSet& other);
  void deep_copy();

 protected:
  std::size_t add(std::string name, numkit::Shape shape, Rng& rng, std::size_t fan_in);
  std::vector<NamedParam> params_;
};

class CateEncoder : public ParamSet {
 public:
  CateEncoder() = default;
  CateEncoder(const ArchConfig& arch, Rng& rng);

  // Per-example embeddings [N, d] of images [N, C, H, W] (or already flat [N, C*H*W]).
  Tensor forward(const Tensor& images) const;
  // Mean over the batch of per-example embeddings, shape [d].
  Tensor embed_batch(const Tensor& images) const;
  std::size_t output_dim() const { return output_dim_; }

 private:
  std::size_t layers_ = 0;
  std::size_t output_dim_ = 0;
  double slope_ = 0.2;
};

class Generator : public ParamSet {
 public:
  Generator() = default;
  Generator(const ArchConfig& arch, Rng& rng);

  // Images [N, C, H, W] in (-1, 1) for the given noise [N, noise_dim] and labels.
  Tensor forward(const Tensor& noise, std::span<const int> labels) const;
  // Draws the noise from rng.
  Tensor generate(std::span<const int> labels, Rng& rng) const;
  Tensor generate(std::span<const int> labels, std::uint64_t seed) const;

 private:
  ArchConfig arch_;
};

struct DiscriminatorOutput {
  Tensor features;      // [N, F]
  Tensor rf_logits;     // [N, 1]
  Tensor class_logits;  // [N, C]
};

class Discriminator : public ParamSet {
 public:
  Discriminator() = default;
  Discriminator(const ArchConfig& arch, Rng& rng);

  Tensor features(const Tensor& images) const;
  Tensor rf_logits(const Tensor& features) const;
  // embedding is [d] or [1, d] (shared by the batch), or [N, d].
  Tensor class_logits(const Tensor& features, const Tensor& embedding) const;
  DiscriminatorOutput discriminate(const Tensor& images, const Tensor& embedding) const;

 private:
  std::size_t convs_ = 0;
  std::vector<std::size_t> strides_;
  std::size_t embed_dim_ = 0;
  double slope_ = 0.2;
};

// The three networks a client trains. Flattened order is CATE, G, D.
class ClientModel {
 public:
  ClientModel() = default;
  ClientModel(const ArchConfig& arch, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  CateEncoder& cate() { return cate_; }
  const CateEncoder& cate() const { return cate_; }
  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const Discriminator& discriminator() const { return disc_; }

  std::size_t parameter_count() const;
  ParamVector flatten() const;
  // Throws DimensionError on a length mismatch.
  void load(const ParamVector& params);
  std::vector<std::string> parameter_names() const;
  std::vector<NamedParam> named_parameters() const;
  // Independent copy; no tensors are shared with *this.
  ClientModel clone() const;

 private:
  ArchConfig arch_;
  CateEncoder cate_;
  Generator gen_;
  Discriminator disc_;
};

// Flattened ranges of each network inside ClientModel::flatten().
struct ParamLayout {
  std::size_t cate_begin = 0, cate_end = 0;
  std::size_t gen_begin = 0, gen_end = 0;
  std::size_t disc_begin = 0, disc_end = 0;
};
ParamLayout param_layout(const ClientModel& model);

}  // namespace fcil::models
