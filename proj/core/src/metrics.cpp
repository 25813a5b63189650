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

#include "fcil/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fcil/error.hpp"

namespace fcil::metrics {

namespace {
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
}

AccuracyRecord::AccuracyRecord(std::size_t clients, std::size_t tasks)
    : clients_(clients), tasks_(tasks), a_(clients * tasks * tasks, kUnset), n_(clients * tasks, 0.0) {
  if (clients == 0 || tasks == 0) throw UsageError("accuracy record needs at least one client and task");
}

std::size_t AccuracyRecord::index(std::size_t k, std::size_t t, std::size_t i) const {
  if (k >= clients_ || t >= tasks_ || i > t) {
    throw UsageError("accuracy index (" + std::to_string(k) + ", " + std::to_string(t) + ", " +
                     std::to_string(i) + ") outside the record");
  }
  return (k * tasks_ + t) * tasks_ + i;
}

void AccuracyRecord::set_accuracy(std::size_t k, std::size_t t, std::size_t i, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw UsageError("accuracy outside [0, 1]");
  a_[index(k, t, i)] = value;
}

void AccuracyRecord::set_count(std::size_t k, std::size_t i, double count) {
  if (k >= clients_ || i >= tasks_) throw UsageError("count index outside the record");
  if (!(count > 0.0)) throw UsageError("shard sizes must be positive");
  n_[k * tasks_ + i] = count;
}

double AccuracyRecord::accuracy(std::size_t k, std::size_t t, std::size_t i) const {
  const double v = a_[index(k, t, i)];
  if (std::isnan(v)) {
    throw UsageError("accuracy (" + std::to_string(k) + ", " + std::to_string(t) + ", " +
                     std::to_string(i) + ") has not been recorded");
  }
  return v;
}

double AccuracyRecord::count(std::size_t k, std::size_t i) const {
  if (k >= clients_ || i >= tasks_) throw UsageError("count index outside the record");
  return n_[k * tasks_ + i];
}

bool AccuracyRecord::has_accuracy(std::size_t k, std::size_t t, std::size_t i) const {
  return !std::isnan(a_[index(k, t, i)]);
}

bool AccuracyRecord::complete_through(std::size_t stages) const {
  if (stages == 0 || stages > tasks_) return false;
  for (std::size_t k = 0; k < clients_; ++k) {
    for (std::size_t i = 0; i < stages; ++i)
      if (!(count(k, i) > 0.0)) return false;
    for (std::size_t t = 0; t < stages; ++t)
      for (std::size_t i = 0; i <= t; ++i)
        if (!has_accuracy(k, t, i)) return false;
  }
  return true;
}

AccuracyRecord AccuracyRecord::from_raw(std::size_t clients, std::size_t tasks, std::vector<double> a,
                                        std::vector<double> n) {
  AccuracyRecord rec(clients, tasks);
  if (a.size() != rec.a_.size() || n.size() != rec.n_.size()) {
    throw FormatError("accuracy record has the wrong number of entries");
  }
  rec.a_ = std::move(a);
  rec.n_ = std::move(n);
  return rec;
}

double average_accuracy(const AccuracyRecord& rec) {
  if (!rec.complete_through(rec.tasks())) throw UsageError("average_accuracy of an incomplete record");
  const std::size_t last = rec.tasks() - 1;
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < rec.clients(); ++k) {
    for (std::size_t i = 0; i <= last; ++i) {
      num += rec.accuracy(k, last, i) * rec.count(k, i);
      den += rec.count(k, i);
    }
  }
  return num / den;
}

double average_forgetting(const AccuracyRecord& rec) {
  if (rec.tasks() < 2) throw UsageError("average_forgetting needs at least two tasks");
  if (!rec.complete_through(rec.tasks())) throw UsageError("average_forgetting of an incomplete record");
  const std::size_t last = rec.tasks() - 1;
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < rec.clients(); ++k) {
    for (std::size_t i = 0; i < last; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t t = i; t < last; ++t) peak = std::max(peak, rec.accuracy(k, t, i));
      num += (peak - rec.accuracy(k, last, i)) * rec.count(k, i);
      den += rec.count(k, i);
    }
  }
  return num / den;
}

MeanSd mean_sd(std::span<const double> values) {
  if (values.empty()) throw UsageError("mean of no values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << "\n";
  out << "seed,method,sequence,avg_accuracy,avg_forgetting\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.method << ',' << r.sequence << ',' << format_double(r.avg_accuracy) << ','
        << format_double(r.avg_forgetting) << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError("metrics file does not start with '" + std::string(kMetricsHeader) + "'");
  }
  if (!std::getline(in, line) || line != "seed,method,sequence,avg_accuracy,avg_forgetting") {
    throw FormatError("metrics file has an unexpected column header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string seed, acc, fgt;
    MetricsRow r;
    if (!std::getline(ss, seed, ',') || !std::getline(ss, r.method, ',') ||
        !std::getline(ss, r.sequence, ',') || !std::getline(ss, acc, ',') || !std::getline(ss, fgt)) {
      throw FormatError("malformed metrics row '" + line + "'");
    }
    try {
      r.seed = std::stoull(seed);
      r.avg_accuracy = std::stod(acc);
      r.avg_forgetting = std::stod(fgt);
    } catch (const std::exception&) {
      throw FormatError("malformed metrics row '" + line + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_accuracy_dump(std::ostream& out, std::uint64_t seed, const std::string& method,
                         const std::string& sequence, const AccuracyRecord& rec, bool with_header) {
  if (with_header) {
    out << kAccuracyDumpHeader << "\n";
    out << "seed,method,sequence,client,stage,task,accuracy,count\n";
  }
  for (std::size_t k = 0; k < rec.clients(); ++k)
    for (std::size_t t = 0; t < rec.tasks(); ++t)
      for (std::size_t i = 0; i <= t; ++i) {
        if (!rec.has_accuracy(k, t, i)) continue;
        out << seed << ',' << method << ',' << sequence << ',' << k << ',' << t << ',' << i << ','
            << format_double(rec.accuracy(k, t, i)) << ',' << format_double(rec.count(k, i)) << "\n";
      }
}

}  // namespace fcil::metrics
