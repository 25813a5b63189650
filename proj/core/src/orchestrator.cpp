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

#include "fcil/orchestrator.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <future>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fcil/client_runtime.hpp"
#include "fcil/error.hpp"
#include "fcil/version.hpp"

namespace fcil::orchestrator {

namespace nk = fcil::numkit;

namespace {

// Seed-derivation tags.
enum : std::uint64_t { kTagInit = 1, kTagRound = 2, kTagReplay = 3, kTagConsolidate = 4, kTagBlobs = 5 };

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) { return metrics::format_double(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v, int) { return std::to_string(v); }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kFedGtea: return "fedgtea";
    case Method::kFedAvg: return "fedavg";
    case Method::kFedProx: return "fedprox";
  }
  return "?";
}

std::string to_string(SequenceId s) {
  switch (s) {
    case SequenceId::kCifar10: return "cifar10";
    case SequenceId::kCifar100Icarl: return "cifar100-icarl";
    case SequenceId::kCifar100Super: return "cifar100-super";
    case SequenceId::kToy: return "toy";
  }
  return "?";
}

std::string to_string(Scale s) { return s == Scale::kToy ? "toy" : "full"; }

Method parse_method(const std::string& s) {
  if (s == "fedgtea") return Method::kFedGtea;
  if (s == "fedavg") return Method::kFedAvg;
  if (s == "fedprox") return Method::kFedProx;
  throw ConfigError("unknown method '" + s + "' (fedgtea, fedavg, fedprox)");
}

SequenceId parse_sequence(const std::string& s) {
  if (s == "cifar10") return SequenceId::kCifar10;
  if (s == "cifar100-icarl") return SequenceId::kCifar100Icarl;
  if (s == "cifar100-super") return SequenceId::kCifar100Super;
  if (s == "toy") return SequenceId::kToy;
  throw ConfigError("unknown sequence '" + s + "' (cifar10, cifar100-icarl, cifar100-super, toy)");
}

Scale parse_scale(const std::string& s) {
  if (s == "toy") return Scale::kToy;
  if (s == "full") return Scale::kFull;
  throw ConfigError("unknown scale '" + s + "' (toy, full)");
}

void Ablations::enable(const std::string& name) {
  if (name == "no_cate") no_cate = true;
  else if (name == "no_wasserstein") no_wasserstein = true;
  else if (name == "no_anchor") no_anchor = true;
  else if (name == "no_distillation") no_distillation = true;
  else throw ConfigError("unknown ablation '" + name + "'");
}

FederationConfig FederationConfig::defaults(SequenceId sequence, Scale scale) {
  FederationConfig c;
  c.sequence = sequence;
  c.scale = scale;
  switch (sequence) {
    case SequenceId::kCifar10:
      c.num_clients = 5;
      c.client_lr = 1e-4;
      c.rounds_per_task = 60;
      c.local_iterations = 100;
      break;
    case SequenceId::kCifar100Icarl:
    case SequenceId::kCifar100Super:
      c.num_clients = 10;
      c.client_lr = 1e-3;
      c.rounds_per_task = 40;
      c.local_iterations = 400;
      break;
    case SequenceId::kToy:
      c.num_clients = 2;
      c.scale = Scale::kToy;
      break;
  }
  if (c.scale == Scale::kToy) {
    c.replay_per_class = 20;
    c.client_lr = 1e-3;
    if (sequence == SequenceId::kToy) {
      c.rounds_per_task = 1;
      c.local_iterations = 200;
    } else {
      c.rounds_per_task = 2;
      c.local_iterations = 50;
    }
  }
  return c;
}

void FederationConfig::validate() const {
  if (num_clients == 0) throw ConfigError("num_clients must be positive");
  if (batch_size == 0 || server_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (!(client_lr > 0.0) || !(server_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(weights.alpha >= 0.0 && weights.beta >= 0.0 && weights.gamma >= 0.0)) {
    throw ConfigError("alpha, beta and gamma must be non-negative");
  }
  if (!(prox_mu >= 0.0)) throw ConfigError("prox_mu must be non-negative");
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (sequence == SequenceId::kToy) {
    if (toy_tasks == 0 || toy_classes == 0 || toy_classes % toy_tasks != 0) {
      throw ConfigError("toy_classes must be a positive multiple of toy_tasks");
    }
    if (toy_per_class < num_clients) throw ConfigError("toy_per_class must be at least num_clients");
    if (toy_test_per_class == 0) throw ConfigError("toy_test_per_class must be positive");
    if (!(toy_separation > 0.0) || !(toy_noise > 0.0)) throw ConfigError("toy separation and noise must be positive");
  }
}

server::ServerLossWeights FederationConfig::effective_weights() const {
  if (method != Method::kFedGtea) return {0.0, 0.0, 0.0};
  server::ServerLossWeights w = weights;
  if (ablate.no_distillation) w.alpha = 0.0;
  if (ablate.no_wasserstein || ablate.no_cate) w.beta = 0.0;
  if (ablate.no_anchor) w.gamma = 0.0;
  return w;
}

bool FederationConfig::uses_cate() const { return method == Method::kFedGtea && !ablate.no_cate; }

bool FederationConfig::consolidates() const {
  return method == Method::kFedGtea && server_steps > 0 && !effective_weights().all_zero();
}

std::vector<std::pair<std::string, std::string>> FederationConfig::entries() const {
  return {
      {"method", to_string(method)},
      {"sequence", to_string(sequence)},
      {"scale", to_string(scale)},
      {"num_clients", fmt(num_clients)},
      {"rounds_per_task", fmt(rounds_per_task)},
      {"local_iterations", fmt(local_iterations)},
      {"batch_size", fmt(batch_size)},
      {"client_lr", fmt(client_lr)},
      {"server_lr", fmt(server_lr)},
      {"server_steps", fmt(server_steps)},
      {"server_batch_size", fmt(server_batch_size)},
      {"alpha", fmt(weights.alpha)},
      {"beta", fmt(weights.beta)},
      {"gamma", fmt(weights.gamma)},
      {"no_cate", fmt(ablate.no_cate)},
      {"no_wasserstein", fmt(ablate.no_wasserstein)},
      {"no_anchor", fmt(ablate.no_anchor)},
      {"no_distillation", fmt(ablate.no_distillation)},
      {"prox_mu", fmt(prox_mu)},
      {"master_seed", fmt(master_seed, 0)},
      {"replay_per_class", fmt(replay_per_class)},
      {"class_order_seed", fmt(class_order_seed, 0)},
      {"embed_dim", fmt(embed_dim)},
      {"workers", fmt(workers)},
      {"toy_classes", fmt(toy_classes)},
      {"toy_tasks", fmt(toy_tasks)},
      {"toy_per_class", fmt(toy_per_class)},
      {"toy_test_per_class", fmt(toy_test_per_class)},
      {"toy_separation", fmt(toy_separation)},
      {"toy_noise", fmt(toy_noise)},
  };
}

void FederationConfig::set(const std::string& key, const std::string& v) {
  using U = std::size_t;
  if (key == "method") method = parse_method(v);
  else if (key == "sequence") sequence = parse_sequence(v);
  else if (key == "scale") scale = parse_scale(v);
  else if (key == "num_clients") num_clients = parse_unsigned<U>(key, v);
  else if (key == "rounds_per_task") rounds_per_task = parse_unsigned<U>(key, v);
  else if (key == "local_iterations") local_iterations = parse_unsigned<U>(key, v);
  else if (key == "batch_size") batch_size = parse_unsigned<U>(key, v);
  else if (key == "client_lr") client_lr = parse_double(key, v);
  else if (key == "server_lr") server_lr = parse_double(key, v);
  else if (key == "server_steps") server_steps = parse_unsigned<U>(key, v);
  else if (key == "server_batch_size") server_batch_size = parse_unsigned<U>(key, v);
  else if (key == "alpha") weights.alpha = parse_double(key, v);
  else if (key == "beta") weights.beta = parse_double(key, v);
  else if (key == "gamma") weights.gamma = parse_double(key, v);
  else if (key == "no_cate") ablate.no_cate = parse_bool(key, v);
  else if (key == "no_wasserstein") ablate.no_wasserstein = parse_bool(key, v);
  else if (key == "no_anchor") ablate.no_anchor = parse_bool(key, v);
  else if (key == "no_distillation") ablate.no_distillation = parse_bool(key, v);
  else if (key == "prox_mu") prox_mu = parse_double(key, v);
  else if (key == "master_seed") master_seed = parse_unsigned<std::uint64_t>(key, v);
  else if (key == "replay_per_class") replay_per_class = parse_unsigned<U>(key, v);
  else if (key == "class_order_seed") class_order_seed = parse_unsigned<std::uint64_t>(key, v);
  else if (key == "embed_dim") embed_dim = parse_unsigned<U>(key, v);
  else if (key == "workers") workers = parse_unsigned<U>(key, v);
  else if (key == "toy_classes") toy_classes = parse_unsigned<U>(key, v);
  else if (key == "toy_tasks") toy_tasks = parse_unsigned<U>(key, v);
  else if (key == "toy_per_class") toy_per_class = parse_unsigned<U>(key, v);
  else if (key == "toy_test_per_class") toy_test_per_class = parse_unsigned<U>(key, v);
  else if (key == "toy_separation") toy_separation = parse_double(key, v);
  else if (key == "toy_noise") toy_noise = parse_double(key, v);
  else throw ConfigError("unknown configuration key '" + key + "'");
}

// ---------------------------------------------------------------------------

std::vector<int> TaskSequence::class_to_task() const {
  std::vector<int> out(num_classes, -1);
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (int c : tasks[t].classes) out[static_cast<std::size_t>(c)] = static_cast<int>(t);
  return out;
}

std::vector<std::vector<std::size_t>> TaskSequence::client_shards(const data::LabeledImageSet& train,
                                                                  std::size_t task) const {
  auto rows = rows_of_classes(train, tasks.at(task).classes);
  if (rows.size() < num_clients) {
    throw UsageError("task " + std::to_string(task) + " has " + std::to_string(rows.size()) +
                     " training examples for " + std::to_string(num_clients) + " clients");
  }
  Rng rng(derive_seed(shard_seed, {task}));
  rng.shuffle(rows.begin(), rows.end());
  std::vector<std::vector<std::size_t>> shards(num_clients);
  const std::size_t base = rows.size() / num_clients, extra = rows.size() % num_clients;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < num_clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    shards[k].assign(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                     rows.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(shards[k].begin(), shards[k].end());
    pos += len;
  }
  return shards;
}

TaskSequence make_task_sequence(SequenceId id, const FederationConfig& config) {
  TaskSequence seq;
  seq.id = id;
  seq.num_clients = config.num_clients;
  seq.shard_seed = derive_seed(config.master_seed, {0x5a4d});
  auto chunked = [&](std::vector<int> order, std::size_t per_task) {
    for (std::size_t t = 0; t * per_task < order.size(); ++t) {
      seq.tasks.push_back({t, std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(t * per_task),
                                               order.begin() + static_cast<std::ptrdiff_t>((t + 1) * per_task))});
    }
  };
  auto shuffled = [&](std::size_t n) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(config.class_order_seed);
    rng.shuffle(order.begin(), order.end());
    return order;
  };
  switch (id) {
    case SequenceId::kCifar10:
      seq.num_classes = 10;
      chunked(shuffled(10), 2);
      break;
    case SequenceId::kCifar100Icarl:
      seq.num_classes = 100;
      chunked(shuffled(100), 10);
      break;
    case SequenceId::kCifar100Super: {
      seq.num_classes = 100;
      const auto names = data::cifar100_fine_names();
      const auto table = data::superclass_table();
      for (std::size_t t = 0; t < table.size(); ++t) {
        Task task{t, {}};
        for (auto name : table[t].classes) {
          const auto it = std::find(names.begin(), names.end(), name);
          task.classes.push_back(static_cast<int>(it - names.begin()));
        }
        seq.tasks.push_back(std::move(task));
      }
      break;
    }
    case SequenceId::kToy: {
      if (config.toy_tasks == 0 || config.toy_classes % config.toy_tasks != 0) {
        throw ConfigError("toy_classes must be a positive multiple of toy_tasks");
      }
      seq.num_classes = config.toy_classes;
      std::vector<int> order(config.toy_classes);
      std::iota(order.begin(), order.end(), 0);
      chunked(order, config.toy_classes / config.toy_tasks);
      break;
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------

data::LabeledImageSet subset(const data::LabeledImageSet& set, std::span<const std::size_t> rows) {
  data::LabeledImageSet out;
  out.shape = set.shape;
  out.split = set.split;
  out.pixels.reserve(rows.size() * set.shape.numel());
  for (auto r : rows) {
    const auto img = set.image(r);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(set.labels[r]);
    if (!set.coarse_labels.empty()) out.coarse_labels.push_back(set.coarse_labels[r]);
  }
  return out;
}

std::vector<std::size_t> rows_of_classes(const data::LabeledImageSet& set, std::span<const int> classes) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (std::find(classes.begin(), classes.end(), set.labels[i]) != classes.end()) rows.push_back(i);
  return rows;
}

Dataset load_dataset(const FederationConfig& config, const DataPaths& paths) {
  Dataset d;
  switch (config.sequence) {
    case SequenceId::kToy: {
      data::BlobSpec spec;
      spec.num_classes = config.toy_classes;
      spec.separation = config.toy_separation;
      spec.noise = config.toy_noise;
      spec.seed = derive_seed(config.master_seed, {kTagBlobs});
      spec.per_class = config.toy_per_class;
      d.train = data::make_blobs(spec, data::Split::kTrain);
      spec.per_class = config.toy_test_per_class;
      d.test = data::make_blobs(spec, data::Split::kTest);
      d.num_classes = config.toy_classes;
      break;
    }
    case SequenceId::kCifar10:
      if (paths.cifar10.empty()) throw ConfigError("cifar10 sequence needs cifar10_dir");
      d.train = data::load_cifar10(paths.cifar10, data::Split::kTrain);
      d.test = data::load_cifar10(paths.cifar10, data::Split::kTest);
      d.num_classes = 10;
      break;
    case SequenceId::kCifar100Icarl:
    case SequenceId::kCifar100Super:
      if (paths.cifar100.empty()) throw ConfigError("cifar100 sequences need cifar100_dir");
      d.train = data::load_cifar100(paths.cifar100, data::Split::kTrain);
      d.test = data::load_cifar100(paths.cifar100, data::Split::kTest);
      d.num_classes = 100;
      break;
  }
  return d;
}

models::ArchConfig make_arch(const FederationConfig& config, const data::ImageShape& image,
                             std::size_t num_classes) {
  auto arch = config.scale == Scale::kToy ? models::ArchConfig::scaled_down(image, num_classes)
                                          : models::ArchConfig::full_size(image, num_classes);
  arch.embed_dim = config.embed_dim;
  arch.validate();
  return arch;
}

// ---------------------------------------------------------------------------

namespace {

void check_resume_config(const models::Checkpoint& extra, const FederationConfig& config) {
  for (const auto& [k, v] : config.entries()) {
    if (k == "workers") continue;
    const auto it = extra.header.find("config." + k);
    if (it == extra.header.end() || it->second != v) {
      throw ConfigError("resume checkpoint was written with " + k + "=" +
                        (it == extra.header.end() ? std::string("<missing>") : it->second) +
                        ", current run has " + v);
    }
  }
}

std::vector<geometry::GaussianEmbedding> test_gaussians(const models::ClientModel& model,
                                                        const std::vector<data::LabeledImageSet>& tests,
                                                        std::size_t seen_tasks) {
  nk::NoGradGuard no_grad;
  std::vector<geometry::GaussianEmbedding> out;
  for (std::size_t i = 0; i < seen_tasks; ++i) {
    const auto& set = tests[i];
    std::vector<double> rows;
    rows.reserve(set.size() * model.arch().embed_dim);
    for (std::size_t start = 0; start < set.size(); start += 256) {
      std::vector<std::size_t> idx(std::min<std::size_t>(256, set.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      const auto e = model.cate().forward(client::make_batch(set, idx));
      rows.insert(rows.end(), e.data().begin(), e.data().end());
    }
    out.push_back(geometry::estimate_gaussian(rows, set.size(), model.arch().embed_dim));
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const FederationConfig& config, const Dataset& dataset,
                                const RunOptions& options) {
  config.validate();
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  const TaskSequence seq = make_task_sequence(config.sequence, config);
  if (dataset.num_classes != seq.num_classes) {
    throw UsageError("dataset has " + std::to_string(dataset.num_classes) + " classes, sequence " +
                     to_string(config.sequence) + " needs " + std::to_string(seq.num_classes));
  }
  const auto arch = make_arch(config, dataset.train.shape, seq.num_classes);
  const auto class_to_task = seq.class_to_task();
  const std::size_t tasks = seq.tasks.size();
  const bool use_cate = config.uses_cate();
  const auto weights = config.effective_weights();

  std::vector<data::LabeledImageSet> tests;
  for (const auto& task : seq.tasks) {
    tests.push_back(subset(dataset.test, rows_of_classes(dataset.test, task.classes)));
    if (tests.back().size() == 0) throw UsageError("no test examples for task " + std::to_string(task.id));
  }

  client::ClientConfig ccfg;
  ccfg.local_iterations = config.local_iterations;
  ccfg.batch_size = config.batch_size;
  ccfg.replay_batch_size = config.batch_size;
  ccfg.adam.lr = config.client_lr;
  ccfg.use_cate = use_cate;

  models::ClientModel global_model(arch, derive_seed(config.master_seed, {kTagInit}));
  nk::ParamVector global = global_model.flatten();
  std::optional<nk::ParamVector> prev_global;
  ExperimentResult result;
  result.record = metrics::AccuracyRecord(config.num_clients, tasks);

  std::vector<client::ClientState> clients(config.num_clients);
  for (std::size_t k = 0; k < config.num_clients; ++k) {
    clients[k].client_id = k;
    clients[k].model = global_model.clone();
  }

  std::size_t first_task = 0, round = 0;
  if (options.resume_from) {
    auto saved = server::load_server_checkpoint(*options.resume_from);
    check_resume_config(saved.extra, config);
    if (!(saved.arch == arch)) throw ConfigError("resume checkpoint architecture differs from this run");
    first_task = saved.task;
    round = saved.round;
    global = saved.global;
    prev_global = saved.global;
    result.gaussians = saved.gaussians;
    result.record = metrics::AccuracyRecord::from_raw(config.num_clients, tasks, saved.extra.require("record/accuracy"),
                                                      saved.extra.require("record/count"));
    for (auto& c : clients) {
      for (std::size_t t = 0; t < first_task; ++t) {
        c.current_classes = seq.tasks[t].classes;
        c.task_classes.push_back(seq.tasks[t].classes);
        c.seen_classes.insert(c.seen_classes.end(), seq.tasks[t].classes.begin(), seq.tasks[t].classes.end());
      }
      std::sort(c.seen_classes.begin(), c.seen_classes.end());
    }
    log("resuming after task " + std::to_string(first_task) + " (round " + std::to_string(round) + ")");
  }
  const std::size_t last_task = options.stop_after_tasks ? std::min(tasks, options.stop_after_tasks) : tasks;

  for (std::size_t t = first_task; t < last_task; ++t) {
    const auto shards = seq.client_shards(dataset.train, t);
    for (std::size_t k = 0; k < config.num_clients; ++k) {
      clients[k].begin_task(seq.tasks[t].classes, subset(dataset.train, shards[k]));
      result.record.set_count(k, t, static_cast<double>(shards[k].size()));
    }
    const auto& seen = clients.front().seen_classes;
    numkit::ClassMask previous_mask(seq.num_classes, 0);
    for (std::size_t i = 0; i < t; ++i)
      for (int c : seq.tasks[i].classes) previous_mask[static_cast<std::size_t>(c)] = 1;

    for (std::size_t r = 0; r < config.rounds_per_task; ++r, ++round) {
      std::vector<client::ClientUpdate> updates(config.num_clients);
      auto train_one = [&](std::size_t k) {
        const std::uint64_t seed = derive_seed(config.master_seed, {kTagRound, round, k});
        updates[k] = config.method == Method::kFedProx
                         ? client::local_train_round_prox(clients[k], global, config.prox_mu, ccfg, seed)
                         : client::local_train_round(clients[k], global, ccfg, seed);
      };
      if (config.workers <= 1) {
        for (std::size_t k = 0; k < config.num_clients; ++k) train_one(k);
      } else {
        for (std::size_t start = 0; start < config.num_clients; start += config.workers) {
          std::vector<std::future<void>> jobs;
          for (std::size_t k = start; k < std::min(config.num_clients, start + config.workers); ++k) {
            jobs.push_back(std::async(std::launch::async, train_one, k));
          }
          for (auto& j : jobs) j.get();
        }
      }
      nk::ParamVector anchor = server::aggregate(updates);

      if (config.consolidates()) {
        std::vector<std::size_t> counts;
        std::vector<const models::Generator*> generators;
        for (const auto& c : clients) {
          counts.push_back(c.shard.size());
          generators.push_back(&c.model.generator());
        }
        const auto budgets = server::proportional_budgets(counts, config.replay_per_class * seen.size());
        const auto replay = server::synthesize_replay(generators, budgets, seen, class_to_task,
                                                      derive_seed(config.master_seed, {kTagReplay, round}));
        server::ConsolidationConfig scfg;
        scfg.weights = weights;
        scfg.steps = config.server_steps;
        scfg.batch_size = config.server_batch_size;
        scfg.lr = config.server_lr;
        scfg.use_cate = use_cate;
        scfg.previous_mask = previous_mask;
        scfg.student_mask = clients.front().seen_mask();
        server::ConsolidationTrace trace;
        global = server::consolidate(arch, anchor, t > 0 ? prev_global : std::nullopt, replay, scfg,
                                     derive_seed(config.master_seed, {kTagConsolidate, round}), &trace);
        char buf[160];
        std::snprintf(buf, sizeof buf, "task %zu round %zu: kd=%.4g wasserstein=%.4g anchor=%.4g", t, r,
                      trace.kd, trace.wasserstein, trace.anchor);
        log(buf);
      } else {
        global = std::move(anchor);
        log("task " + std::to_string(t) + " round " + std::to_string(r) + " aggregated");
      }
      if (options.on_round) options.on_round(round, global);
    }

    // Every client holds the distributed global model, so one evaluation per task suffices.
    global_model.load(global);
    const auto mask = clients.front().seen_mask();
    for (std::size_t i = 0; i <= t; ++i) {
      const double acc = client::evaluate(global_model, tests[i], mask, use_cate, config.batch_size);
      for (std::size_t k = 0; k < config.num_clients; ++k) result.record.set_accuracy(k, t, i, acc);
    }
    result.gaussians = test_gaussians(global_model, tests, t + 1);
    prev_global = global;

    if (!options.checkpoint_dir.empty()) {
      server::ServerCheckpoint ckpt;
      ckpt.round = round;
      ckpt.task = t + 1;
      ckpt.arch = arch;
      ckpt.global = global;
      ckpt.gaussians = result.gaussians;
      for (const auto& [k, v] : config.entries()) ckpt.extra.header["config." + k] = v;
      ckpt.extra.header["code_hash"] = kCodeHash;
      ckpt.extra.entries.emplace_back("record/accuracy", result.record.raw_accuracies());
      ckpt.extra.entries.emplace_back("record/count", result.record.raw_counts());
      const auto path = options.checkpoint_dir / ("task_" + std::to_string(t + 1) + ".ckpt");
      server::save_server_checkpoint(path, ckpt);
      result.checkpoints.push_back(path);
    }
  }
  result.final_global = global;
  result.rounds_run = round;
  return result;
}

std::string manifest_json(const FederationConfig& config, const std::vector<std::uint64_t>& seeds,
                          const std::map<std::string, std::string>& extra) {
  nlohmann::ordered_json j;
  j["format"] = "fcil-manifest v1";
  j["version"] = kVersion;
  j["code_hash"] = kCodeHash;
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : config.entries()) cfg[k] = v;
  j["config"] = cfg;
  j["effective_weights"] = {{"alpha", config.effective_weights().alpha},
                            {"beta", config.effective_weights().beta},
                            {"gamma", config.effective_weights().gamma}};
  j["seeds"] = seeds;
  for (const auto& [k, v] : extra) j[k] = v;
  return j.dump(2) + "\n";
}

}  // namespace fcil::orchestrator
