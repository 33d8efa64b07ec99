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

// Acceptance suite. Prints one PASS/FAIL line per criterion; with arguments,
// runs only the named criteria. Exit status is non-zero if any run fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cqil/analysis.hpp"
#include "cqil/bench.hpp"
#include "cqil/executor.hpp"
#include "cqil/fixture.hpp"
#include "cqil/partition.hpp"
#include "cqil/weights_io.hpp"
#include "oracles.hpp"

using namespace cqil;

namespace {

// Tolerances.
constexpr double kCostModelPoints = 3.0;
constexpr double kCostModelSeconds = 1.0;
constexpr double kOracleSeconds = 120.0;
constexpr double kTransmissionsSeconds = 1.0;
constexpr double kWallClockPoints = 10.0;
constexpr double kWallClockPrediction = 0.375;
constexpr double kDelayTrendSeconds = 300.0;
constexpr long kDelayMicros = 500;
constexpr double kUniformPerplexityTol = 1e-3;
constexpr double kSimilarityTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

struct Desk {
  Model model;
  EvalCorpus corpus;
};

const Desk& desk() {
  static const Desk d = [] {
    const auto dir = default_fixture_dir();
    Desk out{load_model(dir / "config.json", dir / "model.cqw"), {}};
    out.corpus = load_corpus(dir / "heldout.txt", out.model.config.max_seq_len);
    return out;
  }();
  return d;
}

Outcome cost_model_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Row {
    int L, p, s, e;
    double reported;
  };
  // Latency reductions reported for the six LLaMA configurations.
  const Row rows[] = {{32, 2, 13, 30, 0.270}, {32, 4, 15, 30, 0.360}, {40, 2, 11, 38, 0.340},
                      {40, 4, 15, 38, 0.432}, {60, 2, 11, 58, 0.386}, {60, 4, 19, 58, 0.483}};
  const CostModelReport table = cost_model_table();
  bool ok = table.rows.size() == 6;
  double worst = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const Row& r = rows[i];
    const double pred = predicted_reduction(build_plan(r.L, r.p, r.s, r.e, 0));
    const double closed = (r.e - r.s + 1) * (1.0 - 1.0 / r.p) / r.L;
    const double delta = 100.0 * std::abs(pred - r.reported);
    worst = std::max(worst, delta);
    ok = ok && std::abs(pred - closed) < 1e-12 && delta <= kCostModelPoints;
    if (i < table.rows.size()) {
      ok = ok && table.rows[i].reported == r.reported && table.rows[i].predicted == pred;
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kCostModelSeconds;
  return {ok, fmt("max |predicted - reported| = %.2fpp (limit %.1fpp), %.3fs", worst,
                  kCostModelPoints, secs)};
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20261016);
  int runs = 0, mismatches = 0;
  WorkerPool pool(4);
  for (int cfg = 0; cfg < 100; ++cfg) {
    const int p = std::vector<int>{1, 2, 4}[rng() % 3];
    const int span = p * static_cast<int>(1 + rng() % (12 / p));
    const int L = span + static_cast<int>(rng() % (12 - span + 1));
    const int s = 1 + static_cast<int>(rng() % (L - span + 1));
    const int heads = 1 << (rng() % 3);
    const int H = heads * static_cast<int>(4 + 4 * (rng() % (32 / heads / 4)));
    ModelConfig c = oracle::small_config(L, H, heads, 2 * H, 29, 12);
    c.activation = static_cast<Activation>(rng() % 3);
    const Model m = make_random_model(c, rng(), 0.2);
    const TokenBatch tb = oracle::random_tokens(1 + rng() % 3, 1 + rng() % 12, 29, rng());
    for (int d = 0; d < p; ++d) {
      const PartitionPlan plan = build_plan(L, p, s, s + span - 1, d);
      const Tensor ref = forward_grouped_reference(tb, m, plan).logits;
      const Tensor got = forward_cqil(tb, m, plan, pool).trace.logits;
      ++runs;
      if (!bit_equal(ref, got)) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kOracleSeconds,
          fmt("%d mismatches in %d runs over 100 configurations, %.1fs", mismatches, runs, secs)};
}

Outcome sequential_reversion() {
  const Desk& d = desk();
  const int L = d.model.config.n_layers;
  const TokenBatch tb = corpus_batch(d.corpus, 0, std::min<std::size_t>(8, d.corpus.sequences.size()));
  const ForwardTrace seq = forward_sequential(tb, d.model);
  WorkerPool pool(1);
  const CqilResult r = forward_cqil(tb, d.model, build_plan(L, 1, 1, L, 0), pool);
  bool ok = bit_equal(seq.logits, r.trace.logits) && seq.inputs.size() == r.trace.inputs.size();
  for (std::size_t i = 0; ok && i < seq.inputs.size(); ++i) ok = bit_equal(seq.inputs[i], r.trace.inputs[i]);
  return {ok, fmt("p=1 over layers 1..%d on %zu held-out sequences: %s", L, tb.batch,
                  ok ? "bit-identical" : "differs")};
}

Outcome transmissions_formula() {
  const auto t0 = std::chrono::steady_clock::now();
  int bad = 0, n = 0;
  for (int p = 1; p <= 16; ++p) {
    for (int d = 0; d < p; ++d, ++n) {
      if (bypass_transmissions(p, d) != oracle::count_pairs(p, d)) ++bad;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < kTransmissionsSeconds,
          fmt("%d of %d (p, d) pairs disagree with the pair count, %.4fs", bad, n, secs)};
}

Outcome wall_clock_speedup() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig c = oracle::small_config(16, 1024, 16, 4096, 256, 512);
  const Model m = make_random_model(c, 7, 0.02);
  const PartitionPlan plan = build_plan(16, 2, 3, 14, 0);
  BenchOptions o;
  o.batch_sizes = {1};
  o.seq_len = 512;
  const LatencyReport r = run_latency_benchmark(m, plan, o);
  const double measured = r.rows[0].measured_reduction;
  const bool ok = std::abs(measured - kWallClockPrediction) * 100.0 <= kWallClockPoints;
  return {ok, fmt("measured %.1f%% vs predicted %.1f%% (limit +/-%.0fpp); seq %.0fms, cqil %.0fms; "
                  "%u hardware threads, %.0fs",
                  100.0 * measured, 100.0 * kWallClockPrediction, kWallClockPoints,
                  r.rows[0].sequential.median_us / 1e3, r.rows[0].cqil.median_us / 1e3,
                  std::thread::hardware_concurrency(), seconds_since(t0))};
}

Outcome bypass_delay_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  // Same layout as the LLaMA-7B bypass study: L=32, p=4, layers 14..29.
  const Model m = make_random_model(oracle::small_config(32, 32, 2, 64, 64, 16), 11, 0.05);
  BenchOptions o;
  o.batch_sizes = {1};
  o.seq_len = 16;
  o.reps = 15;
  o.transfer_delay = std::chrono::microseconds(kDelayMicros);
  std::vector<double> red;
  for (int d = 0; d < 4; ++d) {
    red.push_back(run_latency_benchmark(m, build_plan(32, 4, 14, 29, d), o).rows[0].measured_reduction);
  }
  bool ok = seconds_since(t0) < kDelayTrendSeconds;
  for (int d = 1; d < 4; ++d) ok = ok && red[d] <= red[d - 1];
  return {ok, fmt("reduction by d=0..3: %.3f %.3f %.3f %.3f (delay %ldus), %.1fs", red[0], red[1],
                  red[2], red[3], kDelayMicros, seconds_since(t0))};
}

Outcome perplexity_closed_form() {
  Model uniform = make_random_model(oracle::small_config(4, 32, 2, 64, kByteVocabSize, 64), 13);
  std::fill(uniform.output_projection.data().begin(), uniform.output_projection.data().end(), 0.0f);
  const Desk& d = desk();
  const double u = perplexity(uniform, d.corpus);
  bool ok = std::abs(u - kByteVocabSize) <= kUniformPerplexityTol;
  const double base = perplexity(d.model, d.corpus);
  int identical = 0;
  for (int l = 1; l <= d.model.config.n_layers; ++l) {
    if (substitution_sensitivity(d.model, d.corpus, l, 0) == base) ++identical;
  }
  ok = ok && identical == d.model.config.n_layers;
  return {ok, fmt("uniform model ppl %.6f (target %d +/- %.0e); k=0 equals baseline %.4f for %d/%d layers",
                  u, kByteVocabSize, kUniformPerplexityTol, base, identical, d.model.config.n_layers)};
}

Outcome similarity_properties() {
  const Desk& d = desk();
  const SimilarityMatrix s = input_similarity_matrix(d.model, d.corpus);
  const int L = s.n_layers;
  double asym = 0.0, diag = 0.0;
  for (int l = 1; l <= L; ++l) {
    diag = std::max(diag, std::abs(s.at(l, l) - 1.0));
    for (int k = 1; k <= L; ++k) asym = std::max(asym, std::abs(s.at(l, k) - s.at(k, l)));
  }
  const double first = s.at(1, 2);
  double deep_min = 1.0;
  for (int l = (L + 1) / 2; l < L; ++l) deep_min = std::min(deep_min, s.at(l, l + 1));
  const bool ok = asym <= kSimilarityTol && diag <= kSimilarityTol && deep_min >= first;
  return {ok, fmt("max asymmetry %.1e, max |diag-1| %.1e; min M[l][l+1] for l>=%d is %.4f vs M[1][2] %.4f",
                  asym, diag, (L + 1) / 2, deep_min, first)};
}

Outcome sensitivity_shape() {
  const Desk& d = desk();
  const int L = d.model.config.n_layers;
  const SensitivityGrid g = sensitivity_sweep(d.model, d.corpus, 1);
  // Layer 1 has no earlier input to substitute, so the bottom set is the
  // layers 2..ceil(L/6) that have a k=1 entry.
  const int bottom_last = (L + 5) / 6;
  double bottom = 0.0, middle = 0.0;
  int nb = 0, nm = 0;
  for (const SensitivityEntry& e : g.entries) {
    const double inflation = e.perplexity - g.baseline;
    if (e.layer <= bottom_last) {
      bottom += inflation;
      ++nb;
    }
    if (3 * e.layer >= L && 3 * e.layer <= 2 * L) {
      middle += inflation;
      ++nm;
    }
  }
  bottom /= std::max(nb, 1);
  middle /= std::max(nm, 1);
  const bool ok = nb > 0 && nm > 0 && middle < bottom;
  return {ok, fmt("baseline ppl %.4f; mean k=1 inflation: middle layers %d..%d %.4f, bottom layers 2..%d %.4f",
                  g.baseline, (L + 2) / 3, 2 * L / 3, middle, bottom_last, bottom)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"cost-model-fidelity", cost_model_fidelity},
      {"oracle-equivalence", oracle_equivalence},
      {"sequential-reversion", sequential_reversion},
      {"transmissions-formula", transmissions_formula},
      {"wall-clock-speedup", wall_clock_speedup},
      {"bypass-delay-trend", bypass_delay_trend},
      {"perplexity-closed-form", perplexity_closed_form},
      {"similarity-properties", similarity_properties},
      {"sensitivity-shape", sensitivity_shape},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failed = 0, ran = 0;
  for (const Criterion& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s %-24s %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matched\n");
    return 2;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
