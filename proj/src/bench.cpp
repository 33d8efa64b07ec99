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

#include "cqil/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "cqil/errors.hpp"
#include "cqil/executor.hpp"

namespace cqil {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_us(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

TokenBatch random_tokens(std::size_t batch, std::size_t seq, int vocab,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> dist(0, vocab - 1);
  TokenBatch t;
  t.batch = batch;
  t.seq = seq;
  t.ids.resize(batch * seq);
  for (auto& id : t.ids) id = dist(rng);
  return t;
}

}  // namespace

LatencyStats summarize(std::vector<double> samples_us) {
  LatencyStats s;
  s.samples_us = std::move(samples_us);
  if (s.samples_us.empty()) return s;
  s.mean_us = std::accumulate(s.samples_us.begin(), s.samples_us.end(), 0.0) /
              static_cast<double>(s.samples_us.size());
  std::vector<double> sorted = s.samples_us;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median_us = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return s;
}

LatencyStats time_runs(const std::function<void()>& fn, int reps, int warmups) {
  for (int i = 0; i < warmups; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(std::max(reps, 0)));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    fn();
    samples.push_back(elapsed_us(t0, Clock::now()));
  }
  return summarize(std::move(samples));
}

double measure_timer_resolution_us() {
  double best = 1e9;
  for (int i = 0; i < 1000; ++i) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, elapsed_us(a, b));
  }
  return best;
}

double LatencyReport::mean_measured_reduction() const {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const LatencyRow& r : rows) sum += r.measured_reduction;
  return sum / static_cast<double>(rows.size());
}

LatencyReport run_latency_benchmark(const Model& model,
                                    const PartitionPlan& plan,
                                    const BenchOptions& options) {
  if (options.reps < 5) throw ConfigError("benchmark needs reps >= 5");
  if (options.warmups < 2) throw ConfigError("benchmark needs warmups >= 2");
  if (options.batch_sizes.empty()) throw ConfigError("no batch sizes given");
  plan.validate();
  if (plan.n_layers != model.config.n_layers) {
    throw ConfigError("plan is for " + std::to_string(plan.n_layers) +
                      " layers, model has " +
                      std::to_string(model.config.n_layers));
  }

  LatencyReport report;
  report.plan = plan;
  report.seq_len = options.seq_len;
  report.transfer_delay = options.transfer_delay;
  report.timer_resolution_us = measure_timer_resolution_us();

  WorkerPool pool(static_cast<std::size_t>(plan.group_size));
  inject_transfer_delay(pool, options.transfer_delay);
  const double predicted = predicted_reduction(plan);

  for (std::size_t bs : options.batch_sizes) {
    if (bs == 0) throw ConfigError("batch size must be positive");
    const TokenBatch tokens = random_tokens(bs, options.seq_len,
                                            model.config.vocab_size,
                                            options.seed + bs);
    auto run_seq = [&] { (void)forward_sequential(tokens, model); };
    auto run_cqil = [&] { (void)forward_cqil(tokens, model, plan, pool); };

    for (int i = 0; i < options.warmups; ++i) {
      run_seq();
      run_cqil();
    }
    std::vector<double> seq_us, cqil_us;
    for (int i = 0; i < options.reps; ++i) {
      auto t0 = Clock::now();
      run_seq();
      seq_us.push_back(elapsed_us(t0, Clock::now()));
      t0 = Clock::now();
      run_cqil();
      cqil_us.push_back(elapsed_us(t0, Clock::now()));
    }

    LatencyRow row;
    row.batch_size = bs;
    row.sequential = summarize(std::move(seq_us));
    row.cqil = summarize(std::move(cqil_us));
    row.measured_reduction = 1.0 - row.cqil.median_us / row.sequential.median_us;
    row.predicted_reduction = predicted;
    row.reps = options.reps;
    row.warmups = options.warmups;
    const double fastest = std::min(row.sequential.median_us, row.cqil.median_us);
    if (report.timer_resolution_us > 0.01 * fastest) report.unreliable = true;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string latency_to_csv(const LatencyReport& report) {
  std::ostringstream os;
  os << "batch_size,seq_latency_us,cqil_latency_us,measured_reduction,"
        "predicted_reduction\n";
  char buf[256];
  for (const LatencyRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.3f,%.3f,%.6f,%.6f\n", r.batch_size,
                  r.sequential.median_us, r.cqil.median_us,
                  r.measured_reduction, r.predicted_reduction);
    os << buf;
  }
  return os.str();
}

nlohmann::json latency_to_json(const LatencyReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const LatencyRow& r : report.rows) {
    rows.push_back({{"batch_size", r.batch_size},
                    {"seq_mean_us", r.sequential.mean_us},
                    {"seq_median_us", r.sequential.median_us},
                    {"cqil_mean_us", r.cqil.mean_us},
                    {"cqil_median_us", r.cqil.median_us},
                    {"measured_reduction", r.measured_reduction},
                    {"predicted_reduction", r.predicted_reduction},
                    {"reps", r.reps},
                    {"warmups", r.warmups}});
  }
  return {{"plan", plan_to_json(report.plan)},
          {"seq_len", report.seq_len},
          {"delay_us", report.transfer_delay.count()},
          {"timer_resolution_us", report.timer_resolution_us},
          {"unreliable", report.unreliable},
          {"mean_measured_reduction", report.mean_measured_reduction()},
          {"rows", rows}};
}

double CostModelReport::max_delta_points() const {
  double m = 0.0;
  for (const CostModelRow& r : rows) m = std::max(m, r.delta_points);
  return m;
}

CostModelReport cost_model_table() {
  struct Config {
    const char* model;
    int n_layers, p, s, e;
    double reported;
  };
  static constexpr Config kConfigs[] = {
      {"LLaMA-7B", 32, 2, 13, 30, 0.270},  {"LLaMA-7B", 32, 4, 15, 30, 0.360},
      {"LLaMA-13B", 40, 2, 11, 38, 0.340}, {"LLaMA-13B", 40, 4, 15, 38, 0.432},
      {"LLaMA-33B", 60, 2, 11, 58, 0.386}, {"LLaMA-33B", 60, 4, 19, 58, 0.483},
  };
  CostModelReport report;
  for (const Config& c : kConfigs) {
    const PartitionPlan plan = build_plan(c.n_layers, c.p, c.s, c.e, 1);
    CostModelRow row;
    row.model = c.model;
    row.n_layers = c.n_layers;
    row.group_size = c.p;
    row.start = c.s;
    row.end = c.e;
    row.predicted = predicted_reduction(plan);
    row.reported = c.reported;
    row.delta_points = 100.0 * std::fabs(row.predicted - row.reported);
    row.transmissions_per_group = bypass_transmissions(c.p, 1);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string cost_table_text(const CostModelReport& report) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s %3s %2s %3s %3s %10s %9s %7s %6s\n",
                "model", "L", "p", "s", "e", "predicted", "reported", "delta",
                "tx/grp");
  os << buf;
  for (const CostModelRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf),
                  "%-10s %3d %2d %3d %3d %9.1f%% %8.1f%% %6.1fpp %6lld\n",
                  r.model.c_str(), r.n_layers, r.group_size, r.start, r.end,
                  100.0 * r.predicted, 100.0 * r.reported, r.delta_points,
                  static_cast<long long>(r.transmissions_per_group));
    os << buf;
  }
  return os.str();
}

std::string cost_table_csv(const CostModelReport& report) {
  std::ostringstream os;
  os << "model,L,p,s,e,predicted_reduction,reported_reduction,delta_pp,"
        "transmissions_per_group\n";
  char buf[256];
  for (const CostModelRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%d,%.6f,%.6f,%.3f,%lld\n",
                  r.model.c_str(), r.n_layers, r.group_size, r.start, r.end,
                  r.predicted, r.reported, r.delta_points,
                  static_cast<long long>(r.transmissions_per_group));
    os << buf;
  }
  return os.str();
}

nlohmann::json cost_table_json(const CostModelReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const CostModelRow& r : report.rows) {
    rows.push_back({{"model", r.model},
                    {"L", r.n_layers},
                    {"p", r.group_size},
                    {"s", r.start},
                    {"e", r.end},
                    {"predicted_reduction", r.predicted},
                    {"reported_reduction", r.reported},
                    {"delta_pp", r.delta_points},
                    {"transmissions_per_group", r.transmissions_per_group}});
  }
  return {{"rows", rows}, {"max_delta_pp", report.max_delta_points()}};
}

}  // namespace cqil
