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
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fcil::metrics {

// a(k, t, i): accuracy of client k on task i after training task t (i ≤ t).
// n(k, i): client k's training-shard size for task i.
class AccuracyRecord {
 public:
  AccuracyRecord() = default;
  AccuracyRecord(std::size_t clients, std::size_t tasks);

  std::size_t clients() const { return clients_; }
  std::size_t tasks() const { return tasks_; }

  void set_accuracy(std::size_t k, std::size_t t, std::size_t i, double value);
  void set_count(std::size_t k, std::size_t i, double count);
  double accuracy(std::size_t k, std::size_t t, std::size_t i) const;
  double count(std::size_t k, std::size_t i) const;
  bool has_accuracy(std::size_t k, std::size_t t, std::size_t i) const;
  // Every a(k, t, i) with i ≤ t < stages is filled and every n is positive.
  bool complete_through(std::size_t stages) const;

  // Row-major (k, t, i) values with NaN where unset; used for checkpoints.
  const std::vector<double>& raw_accuracies() const { return a_; }
  const std::vector<double>& raw_counts() const { return n_; }
  static AccuracyRecord from_raw(std::size_t clients, std::size_t tasks, std::vector<double> a,
                                 std::vector<double> n);

 private:
  std::size_t index(std::size_t k, std::size_t t, std::size_t i) const;
  std::size_t clients_ = 0, tasks_ = 0;
  std::vector<double> a_;
  std::vector<double> n_;
};

// Count-weighted mean of the final-stage accuracies.
double average_accuracy(const AccuracyRecord& rec);
// Count-weighted mean over earlier tasks of (peak before the last stage − final).
// Negative values are kept.
double average_forgetting(const AccuracyRecord& rec);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
};
MeanSd mean_sd(std::span<const double> values);

struct MetricsRow {
  std::uint64_t seed = 0;
  std::string method;
  std::string sequence;
  double avg_accuracy = 0.0;
  double avg_forgetting = 0.0;
};

inline constexpr const char* kMetricsHeader = "# fcil-metrics v1";
inline constexpr const char* kAccuracyDumpHeader = "# fcil-accuracy-dump v1";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);
// Long format: seed, method, sequence, client, stage, task, accuracy, count.
void write_accuracy_dump(std::ostream& out, std::uint64_t seed, const std::string& method,
                         const std::string& sequence, const AccuracyRecord& rec, bool with_header);

// Formats a value with enough digits to round-trip.
std::string format_double(double v);

}  // namespace fcil::metrics
