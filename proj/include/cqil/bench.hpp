/* Copyright 2026 The CQIL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CQIL_BENCH_HPP_
#define CQIL_BENCH_HPP_

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqil/model.hpp"
#include "cqil/partition.hpp"

namespace cqil {

struct LatencyStats {
  std::vector<double> samples_us;
  double mean_us = 0.0;
  double median_us = 0.0;
};

LatencyStats summarize(std::vector<double> samples_us);

// Runs `fn` warmups + reps times on the monotonic clock; only the last reps
// runs are kept.
LatencyStats time_runs(const std::function<void()>& fn, int reps, int warmups);

// Smallest non-zero step observed on the steady clock, in microseconds.
double measure_timer_resolution_us();

struct BenchOptions {
  std::vector<std::size_t> batch_sizes{1, 2, 4, 8, 16};
  std::size_t seq_len = 32;
  int reps = 5;
  int warmups = 2;
  std::chrono::microseconds transfer_delay{0};
  std::uint64_t seed = 1234;
};

struct LatencyRow {
  std::size_t batch_size = 0;
  LatencyStats sequential;
  LatencyStats cqil;
  double measured_reduction = 0.0;   // 1 - median(cqil) / median(sequential)
  double predicted_reduction = 0.0;
  int reps = 0;
  int warmups = 0;
};

struct LatencyReport {
  PartitionPlan plan;
  std::size_t seq_len = 0;
  std::chrono::microseconds transfer_delay{0};
  double timer_resolution_us = 0.0;
  // Set when the timer step exceeds 1% of some measured median.
  bool unreliable = false;
  std::vector<LatencyRow> rows;

  double mean_measured_reduction() const;
};

// Full-sequence (prefill-style) forward passes, sequential vs CQIL on the
// same random tokens per batch size. Runs alternate between the two
// executors after warmup. Throws ConfigError for reps < 5, warmups < 2 or a
// plan that does not fit the model.
LatencyReport run_latency_benchmark(const Model& model,
                                    const PartitionPlan& plan,
                                    const BenchOptions& options);

// batch_size, seq_latency_us, cqil_latency_us, measured_reduction,
// predicted_reduction (latencies are medians).
std::string latency_to_csv(const LatencyReport& report);
nlohmann::json latency_to_json(const LatencyReport& report);

struct CostModelRow {
  std::string model;
  int n_layers = 0;
  int group_size = 0;
  int start = 0;
  int end = 0;
  double predicted = 0.0;
  double reported = 0.0;       // measured on 8 A100s, as a fraction
  double delta_points = 0.0;   // |predicted - reported| in percentage points
  std::int64_t transmissions_per_group = 0;  // at d = 1
};

struct CostModelReport {
  std::vector<CostModelRow> rows;
  double max_delta_points() const;
};

// The six LLaMA partition configurations with published latency reductions.
CostModelReport cost_model_table();

std::string cost_table_text(const CostModelReport& report);
std::string cost_table_csv(const CostModelReport& report);
nlohmann::json cost_table_json(const CostModelReport& report);

}  // namespace cqil

#endif  // CQIL_BENCH_HPP_
