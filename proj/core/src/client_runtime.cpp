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

#include "fcil/client_runtime.hpp"

#include <algorithm>
#include <optional>
#include <limits>
#include <numeric>
#include <string>

#include "fcil/error.hpp"

namespace fcil::client {

namespace nk = fcil::numkit;

void ClientState::begin_task(std::span<const int> classes, data::LabeledImageSet task_shard) {
  for (int c : classes) {
    if (std::binary_search(seen_classes.begin(), seen_classes.end(), c)) {
      throw UsageError("class " + std::to_string(c) + " was already seen by client " +
                       std::to_string(client_id));
    }
  }
  for (int y : task_shard.labels) {
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) {
      throw UsageError("shard label " + std::to_string(y) + " is not in the task's class set");
    }
  }
  current_classes.assign(classes.begin(), classes.end());
  task_classes.push_back(current_classes);
  seen_classes.insert(seen_classes.end(), classes.begin(), classes.end());
  std::sort(seen_classes.begin(), seen_classes.end());
  shard = std::move(task_shard);
}

std::size_t ClientState::task_of(int c) const {
  for (std::size_t t = 0; t < task_classes.size(); ++t)
    if (std::find(task_classes[t].begin(), task_classes[t].end(), c) != task_classes[t].end()) return t;
  throw UsageError("class " + std::to_string(c) + " belongs to no task seen by client " +
                   std::to_string(client_id));
}

ClassMask ClientState::seen_mask() const {
  ClassMask mask(model.arch().num_classes, 0);
  for (int c : seen_classes) mask[static_cast<std::size_t>(c)] = 1;
  return mask;
}

Tensor make_batch(const data::LabeledImageSet& set, std::span<const std::size_t> rows) {
  const std::size_t per = set.shape.numel();
  std::vector<double> v(rows.size() * per);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto img = set.image(rows[r]);
    std::copy(img.begin(), img.end(), v.begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return Tensor({rows.size(), set.shape.channels, set.shape.height, set.shape.width}, std::move(v));
}

Tensor task_embedding(const ClientModel& model, const Tensor& images, bool use_cate) {
  if (use_cate) return model.cate().embed_batch(images);
  return Tensor::zeros({model.arch().embed_dim});
}

std::vector<int> sample_labels(std::span<const int> classes, std::size_t n, Rng& rng) {
  if (classes.empty()) throw UsageError("cannot sample labels from an empty class set");
  std::vector<int> out(n);
  for (auto& y : out) y = classes[rng.uniform_int(classes.size())];
  return out;
}

namespace {

// Walks a shuffled permutation of the shard, reshuffling when exhausted.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_.begin(), order_.end());
  }
  std::vector<std::size_t> next(std::size_t b) {
    b = std::min(b, order_.size());
    if (pos_ + b > order_.size()) {
      rng_.shuffle(order_.begin(), order_.end());
      pos_ = 0;
    }
    std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(pos_ + b));
    pos_ += b;
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng& rng_;
};

// One network's optimiser and the slice of the global vector it is pulled towards.
struct Trainable {
  std::vector<Tensor> params;
  nk::AdamState adam;
  std::span<const double> anchor;

  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }
  void step(double mu) {
    if (mu > 0.0) {
      std::size_t offset = 0;
      for (auto& p : params) {
        auto g = nk::grad_buffer(p);
        const auto v = p.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu * (v[i] - anchor[offset + i]);
        offset += v.size();
      }
    }
    adam.step(params);
  }
};

void zero_all(std::span<Trainable* const> nets) {
  for (auto* n : nets) n->zero_grad();
}

ClientUpdate train(ClientState& state, const ParamVector& global, double mu,
                   const ClientConfig& config, std::uint64_t seed, TrainTrace* trace) {
  if (state.shard.size() == 0) {
    throw UsageError("client " + std::to_string(state.client_id) + " has an empty shard");
  }
  if (!(mu >= 0.0)) throw UsageError("proximal weight mu must be non-negative");
  ClientModel& model = state.model;
  model.load(global);

  const auto layout = models::param_layout(model);
  auto slice = [&](std::size_t b, std::size_t e) { return global.values().subspan(b, e - b); };
  Trainable cate{model.cate().tensors(), nk::AdamState(config.adam), slice(layout.cate_begin, layout.cate_end)};
  Trainable gen{model.generator().tensors(), nk::AdamState(config.adam), slice(layout.gen_begin, layout.gen_end)};
  Trainable disc{model.discriminator().tensors(), nk::AdamState(config.adam),
                 slice(layout.disc_begin, layout.disc_end)};
  Trainable* const all[] = {&cate, &gen, &disc};

  const ClassMask mask = state.seen_mask();
  const bool replay = state.seen_classes.size() > state.current_classes.size();
  // Replay draws from the generator as received, before this round's updates
  // pull it toward the current classes.
  std::optional<models::ClientModel> frozen;
  if (replay) frozen.emplace(model.clone());
  const bool use_cate = config.use_cate;
  Rng rng(seed);
  BatchSampler sampler(state.shard.size(), rng);
  TrainTrace last;

  auto guarded = [&](const char* phase, std::size_t it, auto&& fn) {
    try {
      return fn();
    } catch (const NumericError& e) {
      throw NumericError("client " + std::to_string(state.client_id) + " diverged at iteration " +
                         std::to_string(it) + " (" + phase + "): " + e.what());
    }
  };

  for (std::size_t it = 0; it < config.local_iterations; ++it) {
    const auto rows = sampler.next(config.batch_size);
    const Tensor x = make_batch(state.shard, rows);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = state.shard.labels[rows[i]];

    // Real batch: discriminator and CATE.
    last.d_real = guarded("real", it, [&] {
      zero_all(all);
      const auto out = model.discriminator().discriminate(x, task_embedding(model, x, use_cate));
      const Tensor loss = nk::add(nk::bce_with_logits(out.rf_logits, 1.0),
                                  nk::cross_entropy(out.class_logits, y, mask));
      nk::backward(loss);
      disc.step(mu);
      if (use_cate) cate.step(mu);
      return loss.item();
    });

    // Fakes with the batch's labels: discriminator step, then generator step.
    const Tensor fake = guarded("generate", it, [&] { return model.generator().generate(y, rng); });
    last.d_fake = guarded("fake", it, [&] {
      zero_all(all);
      const Tensor xf = fake.detach();
      const auto out = model.discriminator().discriminate(xf, task_embedding(model, xf, use_cate));
      const Tensor loss = nk::add(nk::bce_with_logits(out.rf_logits, 0.0),
                                  nk::cross_entropy(out.class_logits, y, mask));
      nk::backward(loss);
      disc.step(mu);
      if (use_cate) cate.step(mu);
      return loss.item();
    });
    last.g = guarded("generator", it, [&] {
      zero_all(all);
      const auto out = model.discriminator().discriminate(fake, task_embedding(model, fake, use_cate));
      const Tensor loss = nk::add(nk::bce_with_logits(out.rf_logits, 1.0),
                                  nk::cross_entropy(out.class_logits, y, mask));
      nk::backward(loss);
      gen.step(mu);
      if (use_cate) cate.step(mu);
      return loss.item();
    });

    // Rehearsal of every seen class on generated images. The batch is split by
    // task and each part gets its own embedding, as at evaluation time.
    if (replay) {
      last.replay = guarded("replay", it, [&] {
        const auto labels = sample_labels(state.seen_classes, config.replay_batch_size, rng);
        std::vector<std::vector<int>> groups(state.task_classes.size());
        for (int y : labels) groups[state.task_of(y)].push_back(y);
        zero_all(all);
        Tensor loss;
        for (const auto& group : groups) {
          if (group.empty()) continue;
          Tensor xr;
          {
            nk::NoGradGuard no_grad;
            xr = frozen->generator().generate(group, rng);
          }
          const auto out = model.discriminator().discriminate(xr, task_embedding(model, xr, use_cate));
          const double share = static_cast<double>(group.size()) / static_cast<double>(labels.size());
          const Tensor part = nk::scale(nk::cross_entropy(out.class_logits, group, mask), share);
          loss = loss.defined() ? nk::add(loss, part) : part;
        }
        nk::backward(loss);
        disc.step(mu);
        if (use_cate) cate.step(mu);
        return loss.item();
      });
    }
  }
  zero_all(all);
  if (trace) *trace = last;
  return {state.client_id, model.flatten(), state.shard.size()};
}

}  // namespace

ClientUpdate local_train_round(ClientState& state, const ParamVector& global_params,
                               const ClientConfig& config, std::uint64_t seed, TrainTrace* trace) {
  return train(state, global_params, 0.0, config, seed, trace);
}

ClientUpdate local_train_round_prox(ClientState& state, const ParamVector& global_params, double mu,
                                    const ClientConfig& config, std::uint64_t seed,
                                    TrainTrace* trace) {
  return train(state, global_params, mu, config, seed, trace);
}

double accuracy_from_logits(std::span<const double> logits, std::size_t classes,
                            std::span<const int> labels, const ClassMask& mask) {
  if (labels.empty()) throw UsageError("accuracy of an empty set");
  if (logits.size() != labels.size() * classes) throw DimensionError("logit count does not match labels");
  if (!mask.empty() && mask.size() != classes) throw DimensionError("mask width does not match logits");
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = classes;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      if (!mask.empty() && !mask[c]) continue;
      const double v = logits[r * classes + c];
      if (best == classes || v > best_v) {
        best = c;
        best_v = v;
      }
    }
    correct += static_cast<int>(best) == labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const ClientModel& model, const data::LabeledImageSet& test, const ClassMask& mask,
                bool use_cate, std::size_t batch_size) {
  if (test.size() == 0) throw UsageError("evaluate on an empty test shard");
  if (batch_size == 0) throw UsageError("evaluation batch size must be positive");
  nk::NoGradGuard no_grad;
  const std::size_t classes = model.arch().num_classes;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, test.size() - start);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor x = make_batch(test, rows);
    const auto out = model.discriminator().discriminate(x, task_embedding(model, x, use_cate));
    const std::span<const int> labels(test.labels.data() + start, n);
    const double acc = accuracy_from_logits(out.class_logits.data(), classes, labels, mask);
    correct += static_cast<std::size_t>(std::lround(acc * static_cast<double>(n)));
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace fcil::client
