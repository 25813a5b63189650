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


#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fcil/error.hpp"
#include "fcil/metrics.hpp"

using namespace fcil;
using namespace fcil::metrics;

namespace {

// rows[t][i] for a single client, i <= t
AccuracyRecord one_client(const std::vector<std::vector<double>>& rows, const std::vector<double>& n) {
  AccuracyRecord r(1, rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t i = 0; i <= t; ++i) r.set_accuracy(0, t, i, rows[t][i]);
  for (std::size_t i = 0; i < n.size(); ++i) r.set_count(0, i, n[i]);
  return r;
}

}  // namespace

// Fixtures below use binary fractions where possible so equality is exact.

TEST_CASE("fixture 1: perfect accuracy everywhere") {
  const auto r = one_client({{1}, {1, 1}, {1, 1, 1}}, {5, 6, 7});
  CHECK(average_accuracy(r) == 1.0);
  CHECK(average_forgetting(r) == 0.0);
}

TEST_CASE("fixture 2: weighted final accuracy") {
  // (0.8*10 + 0.4*30) / 40 = 0.5
  const auto r = one_client({{0.9}, {0.8, 0.4}}, {10, 30});
  CHECK(average_accuracy(r) == doctest::Approx(0.5).epsilon(1e-15));
  // only task 0 counts for forgetting: 0.9 - 0.8
  CHECK(average_forgetting(r) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("fixture 3: equal counts give the plain mean, any count scale") {
  const auto r = one_client({{0.5}, {0.5, 0.5}, {0.25, 0.5, 0.75}}, {4, 4, 4});
  CHECK(average_accuracy(r) == 0.5);
  const auto r7 = one_client({{0.5}, {0.5, 0.5}, {0.25, 0.5, 0.75}}, {28, 28, 28});
  CHECK(average_accuracy(r7) == 0.5);
  // task 0: peak 0.5 -> 0.25 ; task 1: 0.5 -> 0.5 ; mean of (0.25, 0)
  CHECK(average_forgetting(r) == 0.125);
  CHECK(average_forgetting(r7) == 0.125);
}

TEST_CASE("fixture 4: constant accuracies do not forget") {
  const auto r = one_client({{0.75}, {0.75, 0.5}, {0.75, 0.5, 0.25}}, {1, 2, 3});
  CHECK(average_forgetting(r) == 0.0);
  // (0.75*1 + 0.5*2 + 0.25*3) / 6 = 2.5 / 6
  CHECK(average_accuracy(r) == doctest::Approx(2.5 / 6.0).epsilon(1e-15));
}

TEST_CASE("fixture 5: single drop") {
  const auto r = one_client({{0.8}, {0.6, 0.7}}, {1, 1});
  CHECK(average_forgetting(r) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("fixture 6: improvement gives negative forgetting") {
  const auto r = one_client({{0.5}, {0.9, 0.3}}, {1, 1});
  CHECK(average_forgetting(r) == doctest::Approx(-0.4).epsilon(1e-14));
  const auto exact = one_client({{0.25}, {0.75, 0.5}}, {3, 3});
  CHECK(average_forgetting(exact) == -0.5);
}

TEST_CASE("fixture 7: peak taken over intermediate stages") {
  // task 0: 0.5, 0.75, final 0.25 -> 0.5
  // task 1: 0.5, final 0.375     -> 0.125
  const auto r = one_client({{0.5}, {0.75, 0.5}, {0.25, 0.375, 1.0}}, {1, 1, 1});
  CHECK(average_forgetting(r) == 0.3125);
  CHECK(average_accuracy(r) == doctest::Approx((0.25 + 0.375 + 1.0) / 3.0).epsilon(1e-15));
}

TEST_CASE("fixture 8: the final stage is not a candidate peak") {
  // task 1 peaks only at the end: 0.5 -> 0.75 gives -0.25, task 0 gives 0
  const auto r = one_client({{0.5}, {0.5, 0.5}, {0.5, 0.75, 0.5}}, {2, 2, 2});
  CHECK(average_forgetting(r) == -0.125);
}

TEST_CASE("fixture 9: two clients, unequal counts") {
  AccuracyRecord r(2, 2);
  // client 0: task 0 1.0 -> 0.5 (drop 0.5), n = (1, 3)
  r.set_accuracy(0, 0, 0, 1.0);
  r.set_accuracy(0, 1, 0, 0.5);
  r.set_accuracy(0, 1, 1, 1.0);
  r.set_count(0, 0, 1);
  r.set_count(0, 1, 3);
  // client 1: task 0 0.5 -> 0.5 (drop 0), n = (3, 1)
  r.set_accuracy(1, 0, 0, 0.5);
  r.set_accuracy(1, 1, 0, 0.5);
  r.set_accuracy(1, 1, 1, 0.0);
  r.set_count(1, 0, 3);
  r.set_count(1, 1, 1);
  // accuracy: (0.5*1 + 1*3 + 0.5*3 + 0*1) / 8 = 5 / 8
  CHECK(average_accuracy(r) == 0.625);
  // forgetting weights n_k^0: (0.5*1 + 0*3) / 4
  CHECK(average_forgetting(r) == 0.125);
}

TEST_CASE("fixture 10: gains and losses cancel") {
  AccuracyRecord r(2, 2);
  r.set_accuracy(0, 0, 0, 0.75);
  r.set_accuracy(0, 1, 0, 0.5);
  r.set_accuracy(0, 1, 1, 0.5);
  r.set_accuracy(1, 0, 0, 0.25);
  r.set_accuracy(1, 1, 0, 0.5);
  r.set_accuracy(1, 1, 1, 0.5);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 2; ++i) r.set_count(k, i, 10);
  CHECK(average_forgetting(r) == 0.0);
  CHECK(average_accuracy(r) == 0.5);
}

TEST_CASE("fixture 11: four tasks, mixed") {
  // i=0: peak max(0.5, 1, 0.75)=1, final 0.25 -> 0.75, n=1
  // i=1: peak max(0.5, 0.25)=0.5, final 0.5   -> 0,    n=2
  // i=2: peak 0.25, final 0.75               -> -0.5, n=1
  const auto r = one_client({{0.5}, {1.0, 0.5}, {0.75, 0.25, 0.25}, {0.25, 0.5, 0.75, 1.0}}, {1, 2, 1, 4});
  CHECK(average_forgetting(r) == 0.0625);
  // (0.25*1 + 0.5*2 + 0.75*1 + 1*4) / 8
  CHECK(average_accuracy(r) == 0.75);
}

TEST_CASE("metric properties") {
  const auto base = one_client({{0.5}, {0.75, 0.5}, {0.25, 0.375, 0.5}}, {3, 5, 7});
  // raising one final accuracy never lowers the average
  auto raised = base;
  raised.set_accuracy(0, 2, 1, 0.875);
  CHECK(average_accuracy(raised) >= average_accuracy(base));
  // final row equal to the per-task maxima -> forgetting <= 0
  const auto kept = one_client({{0.5}, {0.75, 0.5}, {0.75, 0.5, 0.1}}, {3, 5, 7});
  CHECK(average_forgetting(kept) <= 0.0);
}

TEST_CASE("record validation and errors") {
  AccuracyRecord r(1, 2);
  CHECK_FALSE(r.complete_through(2));
  CHECK_THROWS_AS(average_accuracy(r), UsageError);
  CHECK_THROWS_AS(r.set_accuracy(0, 0, 1, 0.5), UsageError);  // i > t
  CHECK_THROWS_AS(r.set_accuracy(0, 0, 0, 1.5), UsageError);
  CHECK_THROWS_AS(r.set_accuracy(0, 0, 0, std::numeric_limits<double>::quiet_NaN()), UsageError);
  CHECK_THROWS_AS(r.set_count(0, 0, 0), UsageError);
  CHECK_THROWS_AS(r.accuracy(0, 0, 0), UsageError);
  r.set_accuracy(0, 0, 0, 0.5);
  r.set_count(0, 0, 2);
  CHECK(r.complete_through(1));
  CHECK_FALSE(r.complete_through(2));
  CHECK_THROWS_AS(average_forgetting(r), UsageError);

  const auto single = one_client({{0.5}}, {1});
  CHECK(average_accuracy(single) == 0.5);
  CHECK_THROWS_AS(average_forgetting(single), UsageError);
  CHECK_THROWS_AS(AccuracyRecord(0, 1), UsageError);

  const auto full = one_client({{0.5}, {0.25, 0.75}}, {1, 2});
  const auto back = AccuracyRecord::from_raw(1, 2, full.raw_accuracies(), full.raw_counts());
  CHECK(average_accuracy(back) == average_accuracy(full));
  CHECK(average_forgetting(back) == average_forgetting(full));
  CHECK_THROWS_AS(AccuracyRecord::from_raw(1, 2, {1.0}, full.raw_counts()), FormatError);
}

TEST_CASE("mean and sample sd") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto m = mean_sd(v);
  CHECK(m.mean == 5.0);
  // sum of squares 32, n-1 = 7
  CHECK(m.sd == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-15));
  const std::vector<double> one{0.3};
  CHECK(mean_sd(one).sd == 0.0);
  CHECK_THROWS_AS(mean_sd(std::vector<double>{}), UsageError);
}

TEST_CASE("metrics csv round trip and accuracy dump") {
  const std::vector<MetricsRow> rows{{1, "fedgtea", "toy", 0.1 + 0.2, -1.0 / 3.0}, {2, "fedavg", "cifar10", 0.5, 0.0}};
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  const auto text = ss.str();
  CHECK(text.rfind("# fcil-metrics v1\nseed,method,sequence,avg_accuracy,avg_forgetting\n", 0) == 0);
  const auto back = read_metrics_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].seed == 1);
  CHECK(back[0].method == "fedgtea");
  CHECK(back[0].avg_accuracy == 0.1 + 0.2);
  CHECK(back[0].avg_forgetting == -1.0 / 3.0);
  CHECK(back[1].sequence == "cifar10");

  std::stringstream bad("seed,method\n");
  CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
  std::stringstream junk("# fcil-metrics v1\nseed,method,sequence,avg_accuracy,avg_forgetting\n1,a,b,x,0\n");
  CHECK_THROWS_AS(read_metrics_csv(junk), FormatError);

  std::stringstream dump;
  write_accuracy_dump(dump, 3, "fedavg", "toy", one_client({{0.5}, {0.25, 0.75}}, {1, 2}), true);
  std::vector<std::string> lines;
  for (std::string line; std::getline(dump, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // banner, columns, three (t, i) entries
  CHECK(lines[0] == kAccuracyDumpHeader);
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
