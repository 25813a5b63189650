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


#include <benchmark/benchmark.h>

#include <vector>

#include "fcil/client_runtime.hpp"
#include "fcil/data.hpp"
#include "fcil/gaussian.hpp"
#include "fcil/numkit/gemm.hpp"
#include "fcil/numkit/ops.hpp"
#include "fcil/rng.hpp"

using namespace fcil;
namespace nk = fcil::numkit;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    nk::gemm_accumulate(false, false, n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(32)->Arg(128)->Arg(256);

// Forward and backward of one stride-2 conv on a batch of 32x32 images.
void BM_Conv2d(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 16, cout = 2 * cin;
  nk::Tensor x({n, cin, 32, 32}, noise(n * cin * 32 * 32, 3));
  nk::Tensor w({cout, cin, 3, 3}, noise(cout * cin * 9, 4), true);
  nk::Tensor b = nk::Tensor::zeros({cout}, true);
  for (auto _ : state) {
    auto loss = nk::sum(nk::conv2d(x, w, b, 2, 1));
    w.zero_grad();
    b.zero_grad();
    nk::backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(3)->Arg(16)->Unit(benchmark::kMillisecond);

geometry::GaussianEmbedding random_gaussian(std::size_t d, std::uint64_t seed) {
  const auto rows = noise(4 * d * d, seed);
  return geometry::estimate_gaussian(rows, 4 * d, d, 1e-3);
}

void BM_W2(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto p = random_gaussian(d, 5), q = random_gaussian(d, 6);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::w2_squared(p, q));
}
BENCHMARK(BM_W2)->Arg(8)->Arg(32)->Arg(64);

void BM_Kl(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto p = random_gaussian(d, 5), q = random_gaussian(d, 6);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::kl_divergence(p, q));
}
BENCHMARK(BM_Kl)->Arg(8)->Arg(32)->Arg(64);

// Local client iterations on the toy blobs with the scaled-down networks.
void BM_ClientRound(benchmark::State& state) {
  data::BlobSpec spec;
  spec.per_class = 64;
  const auto shard = data::make_blobs(spec, data::Split::kTrain);
  const auto arch = models::ArchConfig::scaled_down(shard.shape, 4);
  client::ClientState s;
  s.model = models::ClientModel(arch, 1);
  s.begin_task(std::vector<int>{0, 1, 2, 3}, shard);
  const auto global = s.model.flatten();
  client::ClientConfig config;
  config.local_iterations = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto update = client::local_train_round(s, global, config, ++seed);
    benchmark::DoNotOptimize(update.params.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClientRound)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
