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
#include <filesystem>
#include <numeric>
#include <utility>
#include <vector>

#include "doctest.h"
#include "fcil/data.hpp"
#include "fcil/error.hpp"
#include "fcil/gaussian.hpp"
#include "fcil/rng.hpp"
#include "fcil/server_runtime.hpp"

using namespace fcil;
using namespace fcil::server;
namespace nk = fcil::numkit;

namespace {

models::ArchConfig toy_arch() { return models::ArchConfig::scaled_down({1, 8, 8}, 4); }

ClientUpdate update(std::vector<double> values, std::size_t n, std::size_t id = 0) {
  return {id, ParamVector(std::move(values)), n};
}

// Two tasks {0,1} and {2,3}.
const std::vector<int> kClassToTask{0, 0, 1, 1};

SynthesizedDataset toy_replay(const models::ClientModel& a, const models::ClientModel& b,
                              std::vector<std::size_t> budgets, std::vector<int> seen,
                              std::uint64_t seed, std::vector<int> class_to_task = kClassToTask) {
  const std::vector<const models::Generator*> gens{&a.generator(), &b.generator()};
  return synthesize_replay(gens, budgets, seen, class_to_task, seed);
}

// Replay-shaped set built from blob images, so that tasks are well apart.
SynthesizedDataset blob_replay(std::vector<int> class_to_task, std::size_t per_class) {
  data::BlobSpec spec;
  spec.num_classes = class_to_task.size();
  spec.per_class = per_class;
  spec.seed = 6;
  const auto set = data::make_blobs(spec, data::Split::kTrain);
  SynthesizedDataset r;
  r.shape = set.shape;
  r.pixels = set.pixels;
  r.labels = set.labels;
  r.source_client.assign(set.size(), 0);
  r.class_to_task = class_to_task;
  r.task_rows.resize(static_cast<std::size_t>(*std::max_element(class_to_task.begin(), class_to_task.end()) + 1));
  for (std::size_t i = 0; i < set.size(); ++i)
    r.task_rows[static_cast<std::size_t>(class_to_task[static_cast<std::size_t>(set.labels[i])])].push_back(i);
  return r;
}

// Independent largest-remainder rounding on exact integer quotas.
std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& counts, std::size_t total) {
  unsigned __int128 sum = 0;
  for (auto c : counts) sum += c;
  std::vector<std::size_t> out(counts.size());
  std::vector<unsigned __int128> rem(counts.size());
  std::size_t given = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const unsigned __int128 q = static_cast<unsigned __int128>(total) * counts[k];
    out[k] = static_cast<std::size_t>(q / sum);
    rem[k] = q % sum;
    given += out[k];
  }
  for (std::size_t left = total - given; left > 0; --left) {
    std::size_t best = 0;
    bool found = false;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (rem[k] == 0 && !found) continue;
      if (!found || rem[k] > rem[best]) {
        best = k;
        found = true;
      }
    }
    ++out[best];
    rem[best] = 0;
  }
  return out;
}

double logsumexp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// Central difference of f with respect to a handful of coordinates of tensor p.
template <typename F>
void check_fd(nk::Tensor p, std::span<const double> analytic, F f, Rng& rng, std::size_t probes,
              double h = 1e-6, double tol = 1e-4) {
  auto data = p.mutable_data();
  // rounding in f itself bounds how small a slope can be resolved
  const double floor = 1e-6 * std::max(1.0, std::abs(f()));
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t i = rng.uniform_int(data.size());
    const double keep = data[i];
    data[i] = keep + h;
    const double up = f();
    data[i] = keep - h;
    const double dn = f();
    data[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), floor});
    INFO("fd " << fd << " analytic " << analytic[i]);
    CHECK(std::abs(fd - analytic[i]) / scale <= tol);
  }
}

}  // namespace

TEST_CASE("aggregate: worked examples") {
  const std::vector<ClientUpdate> one{update({1.5, -2.0, 3.0}, 7)};
  CHECK(aggregate(one) == one[0].params);

  const std::vector<ClientUpdate> opposite{update({1.0, -2.0, 0.5}, 4), update({-1.0, 2.0, -0.5}, 4)};
  const auto zero = aggregate(opposite);
  for (double v : zero.values()) CHECK(v == 0.0);

  const std::vector<ClientUpdate> weighted{update({0, 0, 0, 0}, 1), update({4, 4, 4, 4}, 3)};
  const auto threes = aggregate(weighted);
  for (double v : threes.values()) CHECK(v == 3.0);
}

TEST_CASE("aggregate: permutation and count-scale invariance") {
  Rng rng(4);
  std::vector<ClientUpdate> ups;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> v(50);
    for (double& x : v) x = rng.normal();
    ups.push_back(update(v, 1 + rng.uniform_int(100), k));
  }
  const auto base = aggregate(ups);
  auto shuffled = ups;
  rng.shuffle(shuffled.begin(), shuffled.end());
  const auto perm = aggregate(shuffled);
  auto scaled = ups;
  for (auto& u : scaled) u.num_examples *= 10;
  const auto big = aggregate(scaled);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(perm[i] == doctest::Approx(base[i]).epsilon(1e-13));
    CHECK(big[i] == doctest::Approx(base[i]).epsilon(1e-13));
  }
  const std::vector<ClientUpdate> small{update({0, 0}, 1), update({4, 4}, 3)};
  const std::vector<ClientUpdate> large{update({0, 0}, 10), update({4, 4}, 30)};
  CHECK(aggregate(small) == aggregate(large));

  CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{}), UsageError);
  CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{update({1, 2}, 1), update({1}, 1)}), DimensionError);
  CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{update({1, 2}, 0)}), UsageError);
}

TEST_CASE("budgets: largest remainder") {
  CHECK(proportional_budgets(std::vector<std::size_t>{100, 300}, 40) == std::vector<std::size_t>{10, 30});
  CHECK(proportional_budgets(std::vector<std::size_t>{1, 1, 1}, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(proportional_budgets(std::vector<std::size_t>{5}, 17) == std::vector<std::size_t>{17});
  CHECK(proportional_budgets(std::vector<std::size_t>{3, 0, 3}, 5) == std::vector<std::size_t>{3, 0, 2});

  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> counts(1 + rng.uniform_int(8));
    for (auto& c : counts) c = rng.uniform_int(1000);
    counts[0] += 1;
    const std::size_t total = rng.uniform_int(5000);
    const auto got = proportional_budgets(counts, total);
    CHECK(got == largest_remainder(counts, total));
    CHECK(std::accumulate(got.begin(), got.end(), std::size_t{0}) == total);
    const double sum = std::accumulate(counts.begin(), counts.end(), 0.0);
    for (std::size_t k = 0; k < counts.size(); ++k) {
      CHECK(std::abs(static_cast<double>(got[k]) - total * counts[k] / sum) < 1.0);
    }
  }
  CHECK_THROWS_AS(proportional_budgets(std::vector<std::size_t>{}, 3), UsageError);
  CHECK_THROWS_AS(proportional_budgets(std::vector<std::size_t>{0, 0}, 3), UsageError);
}

TEST_CASE("synthesize_replay: sizes, labels, partition, determinism") {
  const models::ClientModel a(toy_arch(), 1), b(toy_arch(), 2);
  const auto budgets = proportional_budgets(std::vector<std::size_t>{100, 300}, 40);
  const auto r = toy_replay(a, b, budgets, {0, 1, 2, 3}, 9);
  CHECK(r.size() == 40);
  CHECK(std::count(r.source_client.begin(), r.source_client.end(), 0u) == 10);
  CHECK(std::count(r.source_client.begin(), r.source_client.end(), 1u) == 30);
  CHECK(r.pixels.size() == 40 * 64);
  for (double v : r.pixels) CHECK(std::abs(v) <= 1.0);
  REQUIRE(r.num_tasks() == 2);
  std::size_t covered = 0;
  for (std::size_t t = 0; t < r.num_tasks(); ++t) {
    covered += r.task_rows[t].size();
    for (auto row : r.task_rows[t]) CHECK(kClassToTask[static_cast<std::size_t>(r.labels[row])] == static_cast<int>(t));
  }
  CHECK(covered == r.size());

  const auto again = toy_replay(a, b, budgets, {0, 1, 2, 3}, 9);
  CHECK(again.pixels == r.pixels);
  CHECK(again.labels == r.labels);
  CHECK_FALSE(toy_replay(a, b, budgets, {0, 1, 2, 3}, 10).labels == r.labels);

  const auto single = toy_replay(a, b, {3, 4}, {2}, 1);
  CHECK(single.labels == std::vector<int>(7, 2));
  REQUIRE(single.num_tasks() == 2);
  CHECK(single.task_rows[0].empty());
  CHECK(single.task_rows[1].size() == 7);

  const auto many = toy_replay(a, b, {5000, 5000}, {0, 1, 2, 3}, 5);
  for (int c = 0; c < 4; ++c) {
    const auto n = std::count(many.labels.begin(), many.labels.end(), c);
    CHECK(n >= 2300);
    CHECK(n <= 2700);
  }
  CHECK_THROWS_AS(toy_replay(a, b, {1, 1}, {}, 1), UsageError);
  CHECK_THROWS_AS(toy_replay(a, b, {1, 1}, {0}, 1, {-1, 0, 1, 1}), UsageError);
}

TEST_CASE("kd_loss: zero at the teacher, scalar oracle, gradient") {
  const models::ClientModel m(toy_arch(), 4);
  const models::ClientModel other(toy_arch(), 5);
  const auto r = toy_replay(m, other, {16, 16}, {0, 1}, 3);
  const auto x = r.all_images();
  const nk::ClassMask mask{1, 1, 0, 0};
  const auto p_self = teacher_probabilities(m, x, mask, true);
  CHECK(std::abs(kd_loss(p_self, m, x, mask, true).item()) <= 1e-12);

  // teacher uniform over 2 classes, student logits (10, 0)
  const std::vector<double> uniform{0.5, 0.5};
  const auto logits = nk::Tensor::matrix(1, 2, {10.0, 0.0});
  const double lse = logsumexp({10.0, 0.0});
  const double oracle = 0.5 * (std::log(0.5) - (10.0 - lse)) + 0.5 * (std::log(0.5) - (0.0 - lse));
  CHECK(nk::kl_divergence_to_teacher(uniform, logits).item() == doctest::Approx(oracle).epsilon(1e-12));

  // student differs from teacher: positive, with matching gradients on a small batch
  auto student = m.clone();
  const auto xs = r.images(std::vector<std::size_t>{0, 1, 2, 3});
  const auto p_small = teacher_probabilities(other, xs, mask, true);
  const auto p_other = teacher_probabilities(other, x, mask, true);
  CHECK(kd_loss(p_other, student, x, mask, true).item() > 0.0);
  const auto kd = kd_loss(p_small, student, xs, mask, true);
  nk::backward(kd);
  Rng rng(8);
  auto value = [&] {
    nk::NoGradGuard g;
    return kd_loss(p_small, student, xs, mask, true).item();
  };
  for (const auto& p : student.named_parameters()) {
    if (p.name.rfind("gen/", 0) == 0 || p.name.rfind("disc/rf/", 0) == 0) continue;
    INFO(p.name);
    REQUIRE(p.value.has_grad());
    const std::vector<double> grad(p.value.grad().begin(), p.value.grad().end());
    check_fd(p.value, grad, value, rng, 3);
  }
  // generator is not on the distillation path
  for (const auto& p : student.generator().entries()) CHECK_FALSE(p.value.has_grad());

  // detached embedding keeps CATE out of the gradient
  auto frozen = m.clone();
  nk::backward(kd_loss(p_other, frozen, x, mask, true, true));
  for (const auto& p : frozen.cate().entries()) CHECK_FALSE(p.value.has_grad());
}

TEST_CASE("anchor_loss: values and gradient") {
  const std::vector<double> anchor(6, 1.0);
  const auto at = nk::Tensor::vector(anchor, true);
  CHECK(anchor_loss(std::vector<nk::Tensor>{at}, anchor).item() == doctest::Approx(1e-6));
  const auto p = nk::Tensor::vector({4.0, 5.0, 1.0}, true);
  const auto q = nk::Tensor::vector({1.0, 1.0, 1.0}, true);
  const auto l = anchor_loss(std::vector<nk::Tensor>{p, q}, anchor);
  CHECK(l.item() == doctest::Approx(5.0).epsilon(1e-12));
  nk::backward(l);
  CHECK(p.grad()[0] == doctest::Approx(0.6).epsilon(1e-10));
  CHECK(p.grad()[1] == doctest::Approx(0.8).epsilon(1e-10));
  CHECK(p.grad()[2] == 0.0);
  CHECK(q.grad()[0] == 0.0);

  Rng rng(12);
  std::vector<double> v(20), a(20);
  for (double& x : v) x = rng.normal();
  for (double& x : a) x = rng.normal();
  const auto t = nk::Tensor::vector(v, true);
  nk::backward(anchor_loss(std::vector<nk::Tensor>{t}, a));
  const std::vector<double> grad(t.grad().begin(), t.grad().end());
  check_fd(t, grad, [&] { return anchor_loss(std::vector<nk::Tensor>{t}, a).item(); }, rng, 20);
  CHECK_THROWS_AS(anchor_loss(std::vector<nk::Tensor>{t}, anchor), DimensionError);
}

TEST_CASE("wasserstein_loss: value against the geometry module") {
  const models::ClientModel a(toy_arch(), 1), b(toy_arch(), 2);
  const auto r = blob_replay({0, 1, 2, 2}, 30);
  REQUIRE(r.num_tasks() == 3);
  const auto& cate = a.cate();

  double oracle = 0.0;
  std::vector<geometry::GaussianEmbedding> gs;
  for (const auto& rows : r.task_rows) {
    std::vector<std::vector<double>> samples;
    for (auto row : rows) {
      const std::vector<std::size_t> one{row};
      const auto e = cate.forward(r.images(one));
      samples.emplace_back(e.data().begin(), e.data().end());
    }
    gs.push_back(geometry::estimate_gaussian(samples));
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) oracle += geometry::w2_squared(gs[i], gs[j]);
  CHECK(std::abs(pairwise_w2_sum(cate, r) - oracle) <= 1e-6);
  const double loss = wasserstein_loss(cate, r).item();
  CHECK(std::abs(1.0 / loss - oracle) <= 1e-6);
  CHECK(loss > 0.0);
}

TEST_CASE("wasserstein_loss: one task, collapsed tasks, gradient path") {
  const models::ClientModel a(toy_arch(), 1), b(toy_arch(), 2);
  const auto one = toy_replay(a, b, {10, 10}, {0, 1}, 2);
  CHECK(wasserstein_loss(a.cate(), one).item() == 0.0);

  // identical subsets: separation is ~0, the floor takes over and the slope vanishes
  auto twin = toy_replay(a, b, {10, 10}, {0, 1}, 2);
  const std::size_t n = twin.size();
  twin.pixels.insert(twin.pixels.end(), twin.pixels.begin(), twin.pixels.end());
  for (std::size_t i = 0; i < n; ++i) {
    twin.labels.push_back(twin.labels[i] + 2);
    twin.source_client.push_back(twin.source_client[i]);
  }
  twin.class_to_task = kClassToTask;
  twin.task_rows.assign(2, {});
  for (std::size_t i = 0; i < 2 * n; ++i) twin.task_rows[i < n ? 0 : 1].push_back(i);
  auto cate = a.clone();
  const auto clamped = wasserstein_loss(cate.cate(), twin);
  CHECK(clamped.item() == doctest::Approx(1.0 / kSeparationFloor));
  nk::backward(clamped);
  for (const auto& p : cate.cate().entries())
    for (double g : p.value.grad()) CHECK(g == 0.0);

  // slope is -1/S^2 times the slope of the mean + per-dimension std form
  const auto r = blob_replay(kClassToTask, 4);
  auto model = a.clone();
  const auto& enc = model.cate();
  const auto w = wasserstein_loss(enc, r);
  const double s_exact = 1.0 / w.item();
  nk::backward(w);
  auto surrogate = [&] {
    nk::NoGradGuard g;
    std::vector<std::vector<double>> mu, sd;
    for (const auto& rows : r.task_rows) {
      const auto e = enc.forward(r.images(rows));
      const std::size_t m = e.dim(0), d = e.dim(1);
      std::vector<double> mean(d, 0.0), var(d, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += e.at(i * d + j) / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) var[j] += std::pow(e.at(i * d + j) - mean[j], 2) / static_cast<double>(m - 1);
      for (double& v : var) v = std::sqrt(v + geometry::kCovarianceShrinkage);
      mu.push_back(mean);
      sd.push_back(var);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < mu[0].size(); ++j)
      s += std::pow(mu[0][j] - mu[1][j], 2) + std::pow(sd[0][j] - sd[1][j], 2);
    return -s / (s_exact * s_exact);
  };
  Rng rng(30);
  for (const auto& p : enc.entries()) {
    REQUIRE(p.value.has_grad());
    const std::vector<double> grad(p.value.grad().begin(), p.value.grad().end());
    check_fd(p.value, grad, surrogate, rng, 5);
  }

  auto thin = r;
  thin.task_rows[1].resize(1);
  CHECK_THROWS_AS(wasserstein_loss(enc, thin), EstimationError);
}

TEST_CASE("consolidate: identities") {
  const auto arch = toy_arch();
  const models::ClientModel a(arch, 1), b(arch, 2);
  const auto r = toy_replay(a, b, {40, 40}, {0, 1, 2, 3}, 5);
  const auto anchor = a.flatten();
  const auto prev = b.flatten();
  ConsolidationConfig cfg;
  cfg.previous_mask = {1, 1, 0, 0};
  cfg.student_mask = {1, 1, 1, 1};
  cfg.steps = 0;
  CHECK(consolidate(arch, anchor, prev, r, cfg, 1) == anchor);
  cfg.steps = 10;
  cfg.weights = {0.0, 0.0, 0.0};
  CHECK(consolidate(arch, anchor, prev, r, cfg, 1) == anchor);
  cfg.weights = {0.0, 0.0, 0.4};
  CHECK(consolidate(arch, anchor, prev, r, cfg, 1) == anchor);
  cfg.weights = {};
  const auto moved = consolidate(arch, anchor, prev, r, cfg, 1);
  CHECK_FALSE(moved == anchor);
  CHECK(consolidate(arch, anchor, prev, r, cfg, 1) == moved);
  // Adam moves each coordinate by at most about lr per step
  CHECK(nk::l2_distance(moved, anchor) <= 10 * cfg.lr * std::sqrt(static_cast<double>(anchor.size())) * 1.01);
  cfg.weights = {-1.0, 0.0, 0.0};
  CHECK_THROWS_AS(consolidate(arch, anchor, prev, r, cfg, 1), UsageError);
}

TEST_CASE("consolidate: task separation grows under the Wasserstein term") {
  const auto arch = toy_arch();
  const models::ClientModel a(arch, 1), b(arch, 2);
  const auto r = blob_replay(kClassToTask, 32);
  const auto anchor = a.flatten();
  ConsolidationConfig cfg;
  cfg.previous_mask = {1, 1, 0, 0};
  cfg.student_mask = {1, 1, 1, 1};
  ConsolidationTrace trace;
  const auto after = consolidate(arch, anchor, b.flatten(), r, cfg, 3, &trace);
  models::ClientModel m(arch, 0);
  m.load(after);
  const double before_sum = pairwise_w2_sum(a.cate(), r);
  const double after_sum = pairwise_w2_sum(m.cate(), r);
  MESSAGE("pairwise W2 " << before_sum << " -> " << after_sum);
  CHECK(after_sum >= before_sum);
  CHECK(trace.wasserstein > 0.0);
  CHECK(trace.anchor > 0.0);
  CHECK(trace.kd >= 0.0);
}

TEST_CASE("server checkpoint round trip") {
  const auto arch = toy_arch();
  const models::ClientModel a(arch, 1), b(arch, 2);
  ServerCheckpoint s;
  s.round = 7;
  s.task = 1;
  s.arch = arch;
  s.global = a.flatten();
  s.gaussians = task_gaussians(a.cate(), toy_replay(a, b, {20, 20}, {0, 1, 2, 3}, 1));
  s.extra.header["note"] = "x";
  s.extra.entries.push_back({"record/accuracy", {0.5, 0.25}});
  const auto path = std::filesystem::temp_directory_path() / "fcil_test_server.ckpt";
  save_server_checkpoint(path, s);
  const auto back = load_server_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.round == 7);
  CHECK(back.task == 1);
  CHECK(back.arch == arch);
  CHECK(back.global == s.global);
  REQUIRE(back.gaussians.size() == 2);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(back.gaussians[t].mean == s.gaussians[t].mean);
    const auto x = back.gaussians[t].cov.data();
    const auto y = std::as_const(s.gaussians[t].cov).data();
    CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    CHECK(back.gaussians[t].sample_count == s.gaussians[t].sample_count);
  }
  CHECK(back.extra.header_value("note") == "x");
  CHECK(back.extra.require("record/accuracy") == std::vector<double>{0.5, 0.25});

  auto bad = s;
  bad.global = ParamVector::zeros(3);
  CHECK_THROWS_AS(to_checkpoint(bad), DimensionError);
}
