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

#include "fcil/server_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fcil/error.hpp"
#include "fcil/numkit/adam.hpp"
#include "fcil/numkit/ops.hpp"

namespace fcil::server {

namespace nk = fcil::numkit;
using geometry::GaussianEmbedding;

ParamVector aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw UsageError("aggregate needs at least one client update");
  const std::size_t n = updates.front().params.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params.size() != n) {
      throw DimensionError("client " + std::to_string(u.client_id) + " uploaded " +
                           std::to_string(u.params.size()) + " parameters, expected " + std::to_string(n));
    }
    if (u.num_examples == 0) throw UsageError("client update with zero examples");
    total += static_cast<double>(u.num_examples);
  }
  if (updates.size() == 1) return updates.front().params;
  ParamVector out = ParamVector::zeros(n);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.num_examples) / total;
    for (std::size_t i = 0; i < n; ++i) out[i] += w * u.params[i];
  }
  return out;
}

std::vector<std::size_t> proportional_budgets(std::span<const std::size_t> counts, std::size_t total) {
  if (counts.empty()) throw UsageError("no clients to budget");
  unsigned __int128 sum = 0;
  for (auto c : counts) sum += c;
  if (sum == 0) throw UsageError("all client counts are zero");
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<unsigned __int128, std::size_t>> remainders(counts.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const unsigned __int128 scaled = static_cast<unsigned __int128>(total) * counts[k];
    out[k] = static_cast<std::size_t>(scaled / sum);
    remainders[k] = {scaled % sum, k};
    assigned += out[k];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[remainders[i].second];
  return out;
}

Tensor SynthesizedDataset::images(std::span<const std::size_t> rows) const {
  const std::size_t per = shape.numel();
  std::vector<double> v(rows.size() * per);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(rows[r] * per), per,
                v.begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return Tensor({rows.size(), shape.channels, shape.height, shape.width}, std::move(v));
}

Tensor SynthesizedDataset::all_images() const {
  std::vector<std::size_t> rows(size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return images(rows);
}

SynthesizedDataset synthesize_replay(std::span<const models::Generator* const> generators,
                                     std::span<const std::size_t> budgets,
                                     std::span<const int> seen_classes,
                                     std::span<const int> class_to_task, std::uint64_t seed) {
  if (generators.empty()) throw UsageError("synthesize_replay needs at least one generator");
  if (budgets.size() != generators.size()) throw DimensionError("one budget per generator");
  if (seen_classes.empty()) throw UsageError("synthesize_replay with no seen classes");
  SynthesizedDataset out;
  out.class_to_task.assign(class_to_task.begin(), class_to_task.end());
  int tasks = 0;
  for (int c : seen_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= class_to_task.size() || class_to_task[static_cast<std::size_t>(c)] < 0) {
      throw UsageError("seen class " + std::to_string(c) + " has no task");
    }
    tasks = std::max(tasks, class_to_task[static_cast<std::size_t>(c)] + 1);
  }
  out.task_rows.resize(static_cast<std::size_t>(tasks));

  constexpr std::size_t kChunk = 64;
  nk::NoGradGuard no_grad;
  for (std::size_t k = 0; k < generators.size(); ++k) {
    Rng rng(derive_seed(seed, {k}));
    const auto labels = client::sample_labels(seen_classes, budgets[k], rng);
    for (std::size_t start = 0; start < labels.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, labels.size() - start);
      const Tensor img = generators[k]->generate(std::span(labels).subspan(start, n), rng);
      if (out.pixels.empty()) {
        out.shape = {img.dim(1), img.dim(2), img.dim(3)};
      }
      const auto d = img.data();
      out.pixels.insert(out.pixels.end(), d.begin(), d.end());
    }
    for (int y : labels) {
      out.task_rows[static_cast<std::size_t>(class_to_task[static_cast<std::size_t>(y)])].push_back(out.labels.size());
      out.labels.push_back(y);
      out.source_client.push_back(k);
    }
  }
  return out;
}

std::vector<double> teacher_probabilities(const ClientModel& teacher, const Tensor& images,
                                          const ClassMask& mask, bool use_cate) {
  nk::NoGradGuard no_grad;
  const auto out = teacher.discriminator().discriminate(images, client::task_embedding(teacher, images, use_cate));
  const auto p = nk::softmax(out.class_logits, mask).data();
  return {p.begin(), p.end()};
}

Tensor kd_loss(std::span<const double> teacher_probs, const ClientModel& student, const Tensor& images,
               const ClassMask& student_mask, bool use_cate, bool detach_embedding) {
  Tensor e = client::task_embedding(student, images, use_cate);
  if (detach_embedding) e = e.detach();
  const auto out = student.discriminator().discriminate(images, e);
  return nk::kl_divergence_to_teacher(teacher_probs, out.class_logits, student_mask);
}

std::vector<GaussianEmbedding> task_gaussians(const models::CateEncoder& cate,
                                              const SynthesizedDataset& replay) {
  nk::NoGradGuard no_grad;
  std::vector<GaussianEmbedding> out;
  for (const auto& rows : replay.task_rows) {
    if (rows.size() < 2) throw EstimationError("a replay task subset holds fewer than two samples");
    const Tensor e = cate.forward(replay.images(rows));
    out.push_back(geometry::estimate_gaussian(e.data(), e.dim(0), e.dim(1)));
  }
  return out;
}

double pairwise_w2_sum(const models::CateEncoder& cate, const SynthesizedDataset& replay) {
  const auto g = task_gaussians(cate, replay);
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) total += geometry::w2_squared(g[i], g[j]);
  return total;
}

namespace {

Tensor reciprocal_with_floor(const Tensor& s, double floor) {
  const double v = s.item();
  const bool clamped = v < floor;
  const double denom = clamped ? floor : v;
  return nk::make_op_result("reciprocal_with_floor", {1}, {1.0 / denom}, {s},
                            [s, clamped, denom](std::span<const double> g) {
                              if (!clamped) nk::grad_buffer(s)[0] -= g[0] / (denom * denom);
                            });
}

}  // namespace

Tensor wasserstein_loss(const models::CateEncoder& cate, const SynthesizedDataset& replay) {
  const std::size_t tasks = replay.num_tasks();
  if (tasks < 2) return Tensor::scalar(0.0);

  std::vector<Tensor> means, stds;
  std::vector<GaussianEmbedding> exact;
  for (const auto& rows : replay.task_rows) {
    const std::size_t n = rows.size();
    if (n < 2) throw EstimationError("a replay task subset holds fewer than two samples");
    const Tensor e = cate.forward(replay.images(rows));
    exact.push_back(geometry::estimate_gaussian(e.data(), n, e.dim(1)));
    const Tensor mu = nk::mean_rows(e);
    const Tensor centred = nk::sub(e, nk::broadcast_rows(mu, n));
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    const Tensor var = nk::add_scalar(nk::scale(nk::mean_rows(nk::square(centred)), unbias),
                                      geometry::kCovarianceShrinkage);
    means.push_back(mu);
    stds.push_back(nk::sqrt(var));
  }

  double exact_total = 0.0;
  Tensor surrogate;
  for (std::size_t i = 0; i < tasks; ++i) {
    for (std::size_t j = i + 1; j < tasks; ++j) {
      exact_total += geometry::w2_squared(exact[i], exact[j]);
      const Tensor term = nk::add(nk::sum(nk::square(nk::sub(means[i], means[j]))),
                                  nk::sum(nk::square(nk::sub(stds[i], stds[j]))));
      surrogate = surrogate.defined() ? nk::add(surrogate, term) : term;
    }
  }
  // Exact forward value, surrogate slope.
  const Tensor total = nk::add_scalar(surrogate, exact_total - surrogate.item());
  return reciprocal_with_floor(total, kSeparationFloor);
}

Tensor anchor_loss(std::span<const Tensor> params, std::span<const double> anchor) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  if (n != anchor.size()) {
    throw DimensionError("anchor_loss: " + std::to_string(n) + " parameters against an anchor of " +
                         std::to_string(anchor.size()));
  }
  double sq = 0.0;
  std::size_t offset = 0;
  for (const auto& p : params) {
    for (double v : p.data()) {
      const double d = v - anchor[offset++];
      sq += d * d;
    }
  }
  const double norm = std::sqrt(sq + 1e-12);
  std::vector<Tensor> inputs(params.begin(), params.end());
  return nk::make_op_result(
      "anchor_loss", {1}, {norm}, inputs,
      [inputs, anchor = std::vector<double>(anchor.begin(), anchor.end()), norm](std::span<const double> g) {
        std::size_t offset = 0;
        for (const auto& p : inputs) {
          const auto v = p.data();
          if (nk::wants_grad(p)) {
            auto gp = nk::grad_buffer(p);
            for (std::size_t i = 0; i < v.size(); ++i) gp[i] += g[0] * (v[i] - anchor[offset + i]) / norm;
          }
          offset += v.size();
        }
      });
}

ParamVector consolidate(const models::ArchConfig& arch, const ParamVector& anchor,
                        const std::optional<ParamVector>& prev_global,
                        const SynthesizedDataset& replay, const ConsolidationConfig& config,
                        std::uint64_t seed, ConsolidationTrace* trace) {
  const auto& w = config.weights;
  if (!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0)) {
    throw UsageError("server loss weights must be non-negative");
  }
  if (config.steps == 0 || w.all_zero()) return anchor;
  if (replay.size() == 0) throw UsageError("consolidation needs a non-empty replay set");
  if (config.batch_size == 0) throw UsageError("consolidation batch size must be positive");

  ClientModel model(arch, 0);
  model.load(anchor);
  const bool use_w = w.beta > 0.0 && config.use_cate && replay.num_tasks() >= 2;
  const bool use_anchor = w.gamma > 0.0;
  const ClassMask& student_mask = config.student_mask.empty() ? config.previous_mask : config.student_mask;

  // Distillation batches are drawn within each earlier task's subset: the
  // teacher has never seen the current task's classes, and a batch embedding
  // should describe a single task. Teacher outputs are cached per batch.
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> batches;
  for (const auto& rows : replay.task_rows) {
    if (rows.empty()) continue;
    const int y = replay.labels[rows.front()];
    if (config.previous_mask.empty() || !config.previous_mask[static_cast<std::size_t>(y)]) continue;
    std::vector<std::size_t> order = rows;
    rng.shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + config.batch_size)));
    }
  }
  rng.shuffle(batches.begin(), batches.end());
  const bool use_kd = w.alpha > 0.0 && prev_global.has_value() && !batches.empty();
  std::optional<ClientModel> teacher;
  if (use_kd) {
    teacher.emplace(arch, 0);
    teacher->load(*prev_global);
  }
  std::vector<Tensor> batch_images(batches.size());
  std::vector<std::vector<double>> teacher_cache(batches.size());

  std::vector<Tensor> params;
  for (const auto& p : model.named_parameters()) params.push_back(p.value);
  nk::AdamState adam(nk::AdamConfig{.lr = config.lr});
  ConsolidationTrace last;

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& p : params) p.zero_grad();

    Tensor total;
    auto accumulate = [&](const Tensor& term, double weight) {
      const Tensor weighted = nk::scale(term, weight);
      total = total.defined() ? nk::add(total, weighted) : weighted;
    };
    const char* component = "distillation";
    try {
      if (use_kd) {
        const std::size_t b = step % batches.size();
        if (!batch_images[b].defined()) batch_images[b] = replay.images(batches[b]);
        if (teacher_cache[b].empty()) {
          teacher_cache[b] = teacher_probabilities(*teacher, batch_images[b], config.previous_mask, config.use_cate);
        }
        const Tensor kd = kd_loss(teacher_cache[b], model, batch_images[b], student_mask, config.use_cate,
                                  !config.kd_through_cate);
        last.kd = kd.item();
        accumulate(kd, w.alpha);
      }
      component = "wasserstein";
      if (use_w) {
        const Tensor ws = wasserstein_loss(model.cate(), replay);
        last.wasserstein = ws.item();
        accumulate(ws, w.beta);
      }
      component = "anchor";
      if (use_anchor) {
        const Tensor an = anchor_loss(params, anchor.values());
        last.anchor = an.item();
        accumulate(an, w.gamma);
      }
      component = "total";
      if (!total.defined()) break;
      nk::backward(total);
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << "consolidation diverged at step " << step << " in the " << component
          << " term (last kd=" << last.kd << ", wasserstein=" << last.wasserstein
          << ", anchor=" << last.anchor << "): " << e.what();
      throw NumericError(msg.str());
    }
    adam.step(params);
  }
  if (trace) *trace = last;
  return model.flatten();
}

// ---------------------------------------------------------------------------

models::Checkpoint to_checkpoint(const ServerCheckpoint& s) {
  models::Checkpoint ckpt = s.extra;
  const auto arch_header = s.arch.to_header();
  ckpt.header.insert(arch_header.begin(), arch_header.end());
  ckpt.header["server.round"] = std::to_string(s.round);
  ckpt.header["server.task"] = std::to_string(s.task);
  ckpt.header["server.gaussians"] = std::to_string(s.gaussians.size());

  ClientModel layout(s.arch, 0);
  if (s.global.size() != layout.parameter_count()) {
    throw DimensionError("server checkpoint parameters do not match the architecture");
  }
  std::size_t offset = 0;
  for (const auto& p : layout.named_parameters()) {
    const auto v = s.global.values().subspan(offset, p.value.numel());
    ckpt.entries.emplace_back(p.name, std::vector<double>(v.begin(), v.end()));
    offset += v.size();
  }
  for (std::size_t t = 0; t < s.gaussians.size(); ++t) {
    const auto& g = s.gaussians[t];
    const std::string prefix = "gaussian/" + std::to_string(t) + "/";
    ckpt.entries.emplace_back(prefix + "mean", g.mean);
    ckpt.entries.emplace_back(prefix + "cov", std::vector<double>(g.cov.data().begin(), g.cov.data().end()));
    ckpt.entries.emplace_back(prefix + "count", std::vector<double>{static_cast<double>(g.sample_count)});
  }
  return ckpt;
}

ServerCheckpoint from_checkpoint(const models::Checkpoint& ckpt) {
  ServerCheckpoint s;
  s.arch = models::ArchConfig::from_header(ckpt.header);
  auto number = [&](const std::string& key) {
    const auto& text = ckpt.header_value(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw FormatError("checkpoint header " + key + " is not an integer: '" + text + "'");
    }
  };
  s.round = number("server.round");
  s.task = number("server.task");
  const std::size_t gaussians = number("server.gaussians");
  ClientModel layout(s.arch, 0);
  s.global = models::params_from_checkpoint(ckpt, layout);
  const std::size_t d = s.arch.embed_dim;
  for (std::size_t t = 0; t < gaussians; ++t) {
    const std::string prefix = "gaussian/" + std::to_string(t) + "/";
    GaussianEmbedding g;
    g.mean = ckpt.require(prefix + "mean");
    const auto& cov = ckpt.require(prefix + "cov");
    const auto& count = ckpt.require(prefix + "count");
    if (g.mean.size() != d || cov.size() != d * d || count.size() != 1) {
      throw FormatError("checkpoint Gaussian " + std::to_string(t) + " has the wrong dimension");
    }
    g.cov = numkit::Matrix(d, d, cov);
    g.sample_count = static_cast<std::size_t>(count[0]);
    s.gaussians.push_back(std::move(g));
  }
  // Everything not consumed above is passed through.
  const auto names = layout.parameter_names();
  for (const auto& [name, values] : ckpt.entries) {
    if (name.rfind("gaussian/", 0) == 0) continue;
    if (std::find(names.begin(), names.end(), name) != names.end()) continue;
    s.extra.entries.emplace_back(name, values);
  }
  for (const auto& [k, v] : ckpt.header) {
    if (k.rfind("arch.", 0) == 0 || k.rfind("server.", 0) == 0) continue;
    s.extra.header[k] = v;
  }
  return s;
}

void save_server_checkpoint(const std::filesystem::path& path, const ServerCheckpoint& s) {
  models::save_checkpoint(path, to_checkpoint(s));
}

ServerCheckpoint load_server_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint(models::load_checkpoint(path));
}

}  // namespace fcil::server
