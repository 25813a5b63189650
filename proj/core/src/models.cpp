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

#include "fcil/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fcil/error.hpp"
#include "fcil/numkit/ops.hpp"

namespace fcil::models {

namespace nk = fcil::numkit;

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& text, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw FormatError("architecture header " + key + ": bad integer '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

const std::string& lookup(const std::map<std::string, std::string>& header,
                          const std::string& key) {
  const auto it = header.find(key);
  if (it == header.end()) throw FormatError("architecture header is missing " + key);
  return it->second;
}

std::size_t single(const std::map<std::string, std::string>& header, const std::string& key) {
  const auto v = split_sizes(lookup(header, key), key);
  if (v.size() != 1) throw FormatError("architecture header " + key + " must be one integer");
  return v[0];
}

}  // namespace

ArchConfig ArchConfig::full_size(data::ImageShape image, std::size_t num_classes) {
  ArchConfig a;
  a.image = image;
  a.num_classes = num_classes;
  return a;
}

ArchConfig ArchConfig::scaled_down(data::ImageShape image, std::size_t num_classes) {
  ArchConfig a = full_size(image, num_classes);
  auto shrink = [](std::vector<std::size_t>& v) {
    for (auto& c : v) c = std::max<std::size_t>(4, c / 8);
  };
  shrink(a.disc_channels);
  shrink(a.gen_channels);
  return a;
}

std::vector<std::size_t> ArchConfig::strides() const {
  if (!disc_strides.empty()) return disc_strides;
  // Three downsampling layers; small images keep full resolution in the first layer.
  const bool early = image.height >= 16;
  std::vector<std::size_t> s(disc_channels.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = ((i % 2 == 0) == early) ? 2 : 1;
  return s;
}

void ArchConfig::validate() const {
  if (image.channels == 0 || image.height == 0 || image.width == 0)
    throw ConfigError("image shape must be non-empty");
  if (image.height != image.width || image.height % 8 != 0)
    throw ConfigError("images must be square with a side divisible by 8");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (embed_dim < 1 || noise_dim < 1) throw ConfigError("embedding and noise widths must be positive");
  if (cate_hidden.empty() || disc_channels.empty()) throw ConfigError("empty layer list");
  if (gen_channels.size() != 4) throw ConfigError("generator needs a projection width and three stage widths");
  for (auto c : cate_hidden) if (c == 0) throw ConfigError("zero-width CATE layer");
  for (auto c : disc_channels) if (c == 0) throw ConfigError("zero-width discriminator layer");
  for (auto c : gen_channels) if (c == 0) throw ConfigError("zero-width generator layer");
  const auto s = strides();
  if (s.size() != disc_channels.size()) throw ConfigError("one stride per discriminator layer");
  for (auto v : s) if (v == 0) throw ConfigError("zero stride");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope outside [0,1)");
}

std::map<std::string, std::string> ArchConfig::to_header() const {
  char slope[32];
  std::snprintf(slope, sizeof slope, "%.17g", leaky_slope);
  return {
      {"arch.image", join({image.channels, image.height, image.width})},
      {"arch.num_classes", std::to_string(num_classes)},
      {"arch.embed_dim", std::to_string(embed_dim)},
      {"arch.noise_dim", std::to_string(noise_dim)},
      {"arch.cate_hidden", join(cate_hidden)},
      {"arch.disc_channels", join(disc_channels)},
      {"arch.disc_strides", join(strides())},
      {"arch.gen_channels", join(gen_channels)},
      {"arch.leaky_slope", slope},
  };
}

ArchConfig ArchConfig::from_header(const std::map<std::string, std::string>& header) {
  ArchConfig a;
  const auto img = split_sizes(lookup(header, "arch.image"), "arch.image");
  if (img.size() != 3) throw FormatError("arch.image must hold channels,height,width");
  a.image = {img[0], img[1], img[2]};
  a.num_classes = single(header, "arch.num_classes");
  a.embed_dim = single(header, "arch.embed_dim");
  a.noise_dim = single(header, "arch.noise_dim");
  a.cate_hidden = split_sizes(lookup(header, "arch.cate_hidden"), "arch.cate_hidden");
  a.disc_channels = split_sizes(lookup(header, "arch.disc_channels"), "arch.disc_channels");
  a.disc_strides = split_sizes(lookup(header, "arch.disc_strides"), "arch.disc_strides");
  a.gen_channels = split_sizes(lookup(header, "arch.gen_channels"), "arch.gen_channels");
  const std::string& slope = lookup(header, "arch.leaky_slope");
  try {
    a.leaky_slope = std::stod(slope);
  } catch (const std::exception&) {
    throw FormatError("arch.leaky_slope: bad number '" + slope + "'");
  }
  // Derived strides are written out explicitly; keep them implicit on the way back.
  auto derived = a;
  derived.disc_strides.clear();
  if (derived.strides() == a.disc_strides) a.disc_strides.clear();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("architecture header: ") + e.what());
  }
  return a;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.params_.size() != params_.size()) throw DimensionError("parameter sets differ in layout");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto src = other.params_[i].value.data();
    auto dst = params_[i].value.mutable_data();
    if (src.size() != dst.size()) throw DimensionError("parameter " + params_[i].name + " differs in size");
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void ParamSet::deep_copy() {
  for (auto& p : params_) {
    const auto v = p.value.data();
    p.value = Tensor(p.value.shape(), std::vector<double>(v.begin(), v.end()), true);
  }
}

std::size_t ParamSet::add(std::string name, nk::Shape shape, Rng& rng, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> v(nk::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  params_.push_back({std::move(name), Tensor(std::move(shape), std::move(v), true)});
  return params_.size() - 1;
}

// ---------------------------------------------------------------------------

CateEncoder::CateEncoder(const ArchConfig& arch, Rng& rng)
    : output_dim_(arch.embed_dim), slope_(arch.leaky_slope) {
  std::vector<std::size_t> widths{arch.image.numel()};
  widths.insert(widths.end(), arch.cate_hidden.begin(), arch.cate_hidden.end());
  widths.push_back(arch.embed_dim);
  layers_ = widths.size() - 1;
  for (std::size_t l = 0; l < layers_; ++l) {
    const std::string p = "cate/fc" + std::to_string(l);
    add(p + "/weight", {widths[l + 1], widths[l]}, rng, widths[l]);
    add(p + "/bias", {widths[l + 1]}, rng, widths[l]);
  }
}

Tensor CateEncoder::forward(const Tensor& images) const {
  if (images.rank() < 2) throw DimensionError("CATE expects a batch of images");
  const std::size_t n = images.dim(0);
  Tensor h = images.rank() == 2 ? images : nk::reshape(images, {n, images.numel() / n});
  if (h.dim(1) != at(0).dim(1)) {
    throw DimensionError("CATE input width " + std::to_string(h.dim(1)) + ", expected " +
                         std::to_string(at(0).dim(1)));
  }
  for (std::size_t l = 0; l < layers_; ++l) {
    h = nk::linear(h, at(2 * l), at(2 * l + 1));
    if (l + 1 < layers_) h = nk::leaky_relu(h, slope_);
  }
  return h;
}

Tensor CateEncoder::embed_batch(const Tensor& images) const {
  if (images.rank() < 1 || images.dim(0) == 0) throw UsageError("cate_embed_batch of an empty batch");
  return nk::mean_rows(forward(images));
}

// ---------------------------------------------------------------------------

namespace {

struct StageGeometry {
  std::size_t kernel, stride, padding;
};

StageGeometry gen_stage(const ArchConfig& arch, std::size_t s) {
  if (s == 0) return {arch.image.height / 8, 1, 0};
  return {4, 2, 1};
}

}  // namespace

Generator::Generator(const ArchConfig& arch, Rng& rng) : arch_(arch) {
  const std::size_t in = arch.noise_dim + arch.num_classes;
  add("gen/proj/weight", {arch.gen_channels[0], in}, rng, in);
  add("gen/proj/bias", {arch.gen_channels[0]}, rng, in);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t ci = arch.gen_channels[s];
    const std::size_t co = s + 1 < 4 ? arch.gen_channels[s + 1] : arch.image.channels;
    const auto g = gen_stage(arch, s);
    const std::size_t fan = std::max<std::size_t>(1, ci * g.kernel * g.kernel / (g.stride * g.stride));
    const std::string p = "gen/deconv" + std::to_string(s);
    add(p + "/weight", {ci, co, g.kernel, g.kernel}, rng, fan);
    add(p + "/bias", {co}, rng, fan);
  }
  // Two draws for the same class must not collapse to one image.
  nk::NoGradGuard guard;
  const std::vector<int> labels{0, 0};
  Rng probe(0x5eed);
  const Tensor out = generate(labels, probe);
  const std::size_t per = arch.image.numel();
  if (std::equal(out.data().begin(), out.data().begin() + static_cast<std::ptrdiff_t>(per),
                 out.data().begin() + static_cast<std::ptrdiff_t>(per))) {
    throw NumericError("generator initialisation ignores its noise input");
  }
}

Tensor Generator::forward(const Tensor& noise, std::span<const int> labels) const {
  const std::size_t n = labels.size();
  if (noise.rank() != 2 || noise.dim(0) != n || noise.dim(1) != arch_.noise_dim) {
    throw DimensionError("generator noise must be [" + std::to_string(n) + ", " +
                         std::to_string(arch_.noise_dim) + "], got " + nk::shape_string(noise.shape()));
  }
  std::vector<double> onehot(n * arch_.num_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= arch_.num_classes) {
      throw UsageError("generator label " + std::to_string(y) + " outside [0, " +
                       std::to_string(arch_.num_classes) + ")");
    }
    onehot[i * arch_.num_classes + static_cast<std::size_t>(y)] = 1.0;
  }
  const Tensor cond({n, arch_.num_classes}, std::move(onehot));
  const std::vector<Tensor> parts{noise, cond};
  Tensor h = nk::relu(nk::linear(nk::concat(parts, 1), at(0), at(1)));
  h = nk::reshape(h, {n, arch_.gen_channels[0], 1, 1});
  for (std::size_t s = 0; s < 4; ++s) {
    const auto g = gen_stage(arch_, s);
    h = nk::conv_transpose2d(h, at(2 + 2 * s), at(3 + 2 * s), g.stride, g.padding);
    h = s + 1 < 4 ? nk::relu(h) : nk::tanh(h);
  }
  return h;
}

Tensor Generator::generate(std::span<const int> labels, Rng& rng) const {
  if (labels.empty()) throw UsageError("generate needs at least one label");
  std::vector<double> z(labels.size() * arch_.noise_dim);
  for (auto& v : z) v = rng.normal();
  return forward(Tensor({labels.size(), arch_.noise_dim}, std::move(z)), labels);
}

Tensor Generator::generate(std::span<const int> labels, std::uint64_t seed) const {
  Rng rng(seed);
  return generate(labels, rng);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const ArchConfig& arch, Rng& rng)
    : convs_(arch.disc_channels.size()),
      strides_(arch.strides()),
      embed_dim_(arch.embed_dim),
      slope_(arch.leaky_slope) {
  std::size_t in = arch.image.channels;
  for (std::size_t l = 0; l < convs_; ++l) {
    const std::size_t out = arch.disc_channels[l];
    const std::string p = "disc/conv" + std::to_string(l);
    add(p + "/weight", {out, in, 3, 3}, rng, in * 9);
    add(p + "/bias", {out}, rng, in * 9);
    in = out;
  }
  const std::size_t f = arch.feature_dim();
  add("disc/rf/weight", {1, f}, rng, f);
  add("disc/rf/bias", {1}, rng, f);
  add("disc/class/weight", {arch.num_classes, f + arch.embed_dim}, rng, f + arch.embed_dim);
  add("disc/class/bias", {arch.num_classes}, rng, f + arch.embed_dim);
}

Tensor Discriminator::features(const Tensor& images) const {
  if (images.rank() != 4) throw DimensionError("discriminator expects [N, C, H, W] images");
  Tensor h = images;
  for (std::size_t l = 0; l < convs_; ++l) {
    h = nk::leaky_relu(nk::conv2d(h, at(2 * l), at(2 * l + 1), strides_[l], 1), slope_);
  }
  return nk::global_avg_pool(h);
}

Tensor Discriminator::rf_logits(const Tensor& features) const {
  return nk::linear(features, at(2 * convs_), at(2 * convs_ + 1));
}

Tensor Discriminator::class_logits(const Tensor& features, const Tensor& embedding) const {
  const std::size_t n = features.dim(0);
  Tensor e;
  if (embedding.rank() == 1 && embedding.numel() == embed_dim_) {
    e = nk::broadcast_rows(embedding, n);
  } else if (embedding.rank() == 2 && embedding.dim(1) == embed_dim_ && embedding.dim(0) == 1) {
    e = nk::broadcast_rows(nk::reshape(embedding, {embed_dim_}), n);
  } else if (embedding.rank() == 2 && embedding.dim(1) == embed_dim_ && embedding.dim(0) == n) {
    e = embedding;
  } else {
    throw DimensionError("task embedding must be [" + std::to_string(embed_dim_) + "], [1, " +
                         std::to_string(embed_dim_) + "] or [" + std::to_string(n) + ", " +
                         std::to_string(embed_dim_) + "], got " + nk::shape_string(embedding.shape()));
  }
  const std::vector<Tensor> parts{features, e};
  return nk::linear(nk::concat(parts, 1), at(2 * convs_ + 2), at(2 * convs_ + 3));
}

DiscriminatorOutput Discriminator::discriminate(const Tensor& images, const Tensor& embedding) const {
  DiscriminatorOutput out;
  out.features = features(images);
  out.rf_logits = rf_logits(out.features);
  out.class_logits = class_logits(out.features, embedding);
  return out;
}

// ---------------------------------------------------------------------------

ClientModel::ClientModel(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng cate_rng(derive_seed(seed, {1}));
  Rng gen_rng(derive_seed(seed, {2}));
  Rng disc_rng(derive_seed(seed, {3}));
  cate_ = CateEncoder(arch_, cate_rng);
  gen_ = Generator(arch_, gen_rng);
  disc_ = Discriminator(arch_, disc_rng);
}

std::size_t ClientModel::parameter_count() const {
  return cate_.parameter_count() + gen_.parameter_count() + disc_.parameter_count();
}

std::vector<NamedParam> ClientModel::named_parameters() const {
  std::vector<NamedParam> out;
  for (const ParamSet* set : {static_cast<const ParamSet*>(&cate_), static_cast<const ParamSet*>(&gen_),
                              static_cast<const ParamSet*>(&disc_)}) {
    for (const auto& p : set->entries()) out.push_back(p);
  }
  return out;
}

std::vector<std::string> ClientModel::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& p : named_parameters()) out.push_back(p.name);
  return out;
}

ParamVector ClientModel::flatten() const {
  std::vector<double> v;
  v.reserve(parameter_count());
  for (const auto& p : named_parameters()) {
    const auto d = p.value.data();
    v.insert(v.end(), d.begin(), d.end());
  }
  return ParamVector(std::move(v));
}

void ClientModel::load(const ParamVector& params) {
  if (params.size() != parameter_count()) {
    throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                         " entries, model expects " + std::to_string(parameter_count()));
  }
  std::size_t offset = 0;
  for (auto& p : named_parameters()) {
    Tensor t = p.value;
    auto dst = t.mutable_data();
    std::copy_n(params.values().begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

ClientModel ClientModel::clone() const {
  ClientModel copy = *this;
  copy.cate_.deep_copy();
  copy.gen_.deep_copy();
  copy.disc_.deep_copy();
  return copy;
}

ParamLayout param_layout(const ClientModel& model) {
  ParamLayout l;
  l.cate_end = model.cate().parameter_count();
  l.gen_begin = l.cate_end;
  l.gen_end = l.gen_begin + model.generator().parameter_count();
  l.disc_begin = l.gen_end;
  l.disc_end = l.disc_begin + model.discriminator().parameter_count();
  return l;
}

}  // namespace fcil::models
