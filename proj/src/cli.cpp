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

#include "cqil/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cqil/analysis.hpp"
#include "cqil/bench.hpp"
#include "cqil/errors.hpp"
#include "cqil/executor.hpp"
#include "cqil/fixture.hpp"
#include "cqil/partition.hpp"
#include "cqil/weights_io.hpp"

namespace cqil {
namespace {

struct ModelArgs {
  std::string config;
  std::string weights;
};

struct PlanArgs {
  int n_layers = 0;
  int p = 1;
  int s = 0;  // 0: first layer
  int e = 0;  // 0: last layer
  int d = 0;
};

struct ExecArgs {
  std::string executor = "sequential";
  int first = 0;
  int last = 0;
  long delay_us = 0;
};

struct OutputArgs {
  std::string format;
  std::string path;
};

struct CorpusArgs {
  std::string path;
  std::size_t seq_len = 0;  // 0: model max_seq_len
  std::size_t max_seqs = 0;
};

void add_model_flags(CLI::App* cmd, ModelArgs& m, bool required) {
  auto* c = cmd->add_option("--model", m.config, "Model config JSON");
  auto* w = cmd->add_option("--weights", m.weights, ".cqw weight container");
  if (required) {
    c->required();
    w->required();
  } else {
    w->needs(c);
  }
}

void add_plan_flags(CLI::App* cmd, PlanArgs& p) {
  cmd->add_option("-p", p.p, "Group size")->check(CLI::PositiveNumber);
  cmd->add_option("-s", p.s, "First parallel layer (default 1)");
  cmd->add_option("-e", p.e, "Last parallel layer (default L)");
  cmd->add_option("-d", p.d, "Bypass distance")->check(CLI::NonNegativeNumber);
}

void add_exec_flags(CLI::App* cmd, ExecArgs& x) {
  cmd->add_option("--executor", x.executor, "Forward executor")
      ->check(CLI::IsMember({"sequential", "grouped", "cqil", "attn-ffn"}));
  cmd->add_option("--first", x.first, "attn-ffn: first parallel layer");
  cmd->add_option("--last", x.last, "attn-ffn: last parallel layer");
  cmd->add_option("--delay-us", x.delay_us, "cqil: bypass transfer delay")
      ->check(CLI::NonNegativeNumber);
}

void add_corpus_flags(CLI::App* cmd, CorpusArgs& c) {
  cmd->add_option("--corpus", c.path, "Plain-text evaluation corpus")->required();
  cmd->add_option("--seq-len", c.seq_len, "Tokens per sequence incl. BOS");
  cmd->add_option("--max-seqs", c.max_seqs, "Use at most this many sequences");
}

void add_output_flags(CLI::App* cmd, OutputArgs& o, std::string fallback,
                      std::vector<std::string> formats) {
  o.format = std::move(fallback);
  cmd->add_option("--output", o.format, "Output format")
      ->check(CLI::IsMember(std::move(formats)));
  cmd->add_option("--out", o.path, "Write to this file instead of stdout");
}

void emit(const OutputArgs& o, const std::string& text, std::ostream& out) {
  if (o.path.empty()) {
    out << text;
  } else {
    write_file(o.path, text);
  }
}

PartitionPlan make_plan(const PlanArgs& a, int n_layers) {
  const int s = a.s == 0 ? 1 : a.s;
  const int e = a.e == 0 ? n_layers : a.e;
  return build_plan(n_layers, a.p, s, e, a.d);
}

ExecutorChoice make_choice(const ExecArgs& x, const PlanArgs& p, int n_layers) {
  ExecutorChoice c;
  c.kind = parse_executor(x.executor);
  if (c.kind == ExecutorKind::kGroupedReference || c.kind == ExecutorKind::kCqil) {
    c.plan = make_plan(p, n_layers);
  }
  c.first = x.first == 0 ? 1 : x.first;
  c.last = x.last == 0 ? n_layers : x.last;
  c.transfer_delay = std::chrono::microseconds(x.delay_us);
  return c;
}

EvalCorpus corpus_for(const CorpusArgs& c, const Model& m) {
  const std::size_t seq_len =
      c.seq_len == 0 ? static_cast<std::size_t>(m.config.max_seq_len) : c.seq_len;
  EvalCorpus corpus = load_corpus(c.path, seq_len, c.max_seqs);
  if (corpus.sequences.empty()) throw ConfigError("corpus holds no full sequence");
  corpus.validate(m.config.vocab_size);
  return corpus;
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty() || v <= 0) {
      throw CLI::ValidationError("--batch-sizes", "expected positive integers, got '" + item + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw CLI::ValidationError("--batch-sizes", "empty list");
  return out;
}

int run_app(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Layer-parallel transformer inference engine", "cqil"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // plan
  PlanArgs plan_args;
  OutputArgs plan_out;
  auto* plan_cmd = app.add_subcommand("plan", "Build and print a partition plan");
  plan_cmd->add_option("-L", plan_args.n_layers, "Number of layers")->required();
  add_plan_flags(plan_cmd, plan_args);
  add_output_flags(plan_cmd, plan_out, "text", {"text", "json"});

  // run
  ModelArgs run_model;
  PlanArgs run_plan;
  ExecArgs run_exec;
  std::string run_corpus, run_trace;
  std::size_t run_batch = 1, run_seq = 0;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Forward pass; prints the logits digest");
  add_model_flags(run_cmd, run_model, true);
  add_plan_flags(run_cmd, run_plan);
  add_exec_flags(run_cmd, run_exec);
  run_cmd->add_option("--corpus", run_corpus, "Take inputs from this text");
  run_cmd->add_option("--batch", run_batch, "Sequences per batch")->check(CLI::PositiveNumber);
  run_cmd->add_option("--seq-len", run_seq, "Tokens per sequence (default max_seq_len)");
  run_cmd->add_option("--seed", run_seed, "Seed for random tokens");
  run_cmd->add_option("--trace", run_trace, "cqil: write per-layer timings (JSONL)");

  // similarity
  ModelArgs sim_model;
  CorpusArgs sim_corpus;
  OutputArgs sim_out;
  auto* sim_cmd = app.add_subcommand("similarity", "Layer-input cosine similarity matrix");
  add_model_flags(sim_cmd, sim_model, true);
  add_corpus_flags(sim_cmd, sim_corpus);
  add_output_flags(sim_cmd, sim_out, "csv", {"csv", "json"});

  // sensitivity
  ModelArgs sens_model;
  CorpusArgs sens_corpus;
  OutputArgs sens_out;
  int max_k = 5;
  auto* sens_cmd = app.add_subcommand("sensitivity", "Input-substitution perplexity grid");
  add_model_flags(sens_cmd, sens_model, true);
  add_corpus_flags(sens_cmd, sens_corpus);
  add_output_flags(sens_cmd, sens_out, "csv", {"csv", "json"});
  sens_cmd->add_option("--max-k", max_k, "Largest substitution offset")
      ->check(CLI::PositiveNumber);

  // ppl
  ModelArgs ppl_model;
  CorpusArgs ppl_corpus;
  PlanArgs ppl_plan;
  ExecArgs ppl_exec;
  auto* ppl_cmd = app.add_subcommand("ppl", "Perplexity on a text corpus");
  add_model_flags(ppl_cmd, ppl_model, true);
  add_corpus_flags(ppl_cmd, ppl_corpus);
  add_plan_flags(ppl_cmd, ppl_plan);
  add_exec_flags(ppl_cmd, ppl_exec);

  // bench
  ModelArgs bench_model;
  PlanArgs bench_plan;
  bench_plan.p = 2;
  OutputArgs bench_out;
  BenchOptions bench_opts;
  std::string batch_sizes = "1,2,4,8,16";
  long bench_delay = 0;
  auto* bench_cmd = app.add_subcommand(
      "bench", "Sequential vs cqil latency (random weights unless --weights)");
  add_model_flags(bench_cmd, bench_model, false);
  add_plan_flags(bench_cmd, bench_plan);
  add_output_flags(bench_cmd, bench_out, "csv", {"csv", "json"});
  bench_cmd->add_option("--batch-sizes", batch_sizes, "Comma-separated batch sizes");
  bench_cmd->add_option("--seq-len", bench_opts.seq_len, "Tokens per sequence")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--reps", bench_opts.reps, "Timed repetitions")
      ->check(CLI::Range(5, 1000000));
  bench_cmd->add_option("--warmups", bench_opts.warmups, "Warmup runs")
      ->check(CLI::Range(2, 1000000));
  bench_cmd->add_option("--delay-us", bench_delay, "Bypass transfer delay")
      ->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--seed", bench_opts.seed, "Seed for weights and tokens");

  // cost-table
  OutputArgs cost_out;
  auto* cost_cmd = app.add_subcommand("cost-table", "Cost model vs reported reductions");
  add_output_flags(cost_cmd, cost_out, "text", {"text", "csv", "json"});

  // fixture
  FixtureOptions fx_opts;
  std::string fx_dir = default_fixture_dir().string();
  bool fx_quiet = false;
  auto* fx_cmd = app.add_subcommand("fixture", "Regenerate the bundled desk model");
  fx_cmd->add_option("--out", fx_dir, "Output directory");
  fx_cmd->add_option("--seed", fx_opts.train.seed, "Training seed");
  fx_cmd->add_option("--steps", fx_opts.train.steps, "Optimizer steps")
      ->check(CLI::PositiveNumber);
  fx_cmd->add_flag("--quiet", fx_quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  if (*plan_cmd) {
    const PartitionPlan plan = build_plan(plan_args.n_layers, plan_args.p,
                                          plan_args.s == 0 ? 1 : plan_args.s,
                                          plan_args.e == 0 ? plan_args.n_layers : plan_args.e,
                                          plan_args.d);
    std::string text;
    if (plan_out.format == "json") {
      text = plan_to_json(plan).dump(2) + "\n";
    } else {
      std::ostringstream s;
      s << format_groups(plan) << "\n"
        << "groups: " << plan.group_count() << "\n"
        << "predicted_reduction: " << fmt_double(predicted_reduction(plan)) << "\n"
        << "bypass_transmissions_per_group: "
        << bypass_transmissions(plan.group_size, plan.bypass) << "\n";
      text = s.str();
    }
    emit(plan_out, text, out);
    return kExitOk;
  }

  if (*run_cmd) {
    const Model model = load_model(run_model.config, run_model.weights);
    const ModelConfig& cfg = model.config;
    const ExecutorChoice choice = make_choice(run_exec, run_plan, cfg.n_layers);
    const std::size_t seq =
        run_seq == 0 ? static_cast<std::size_t>(cfg.max_seq_len) : run_seq;
    TokenBatch tokens;
    if (!run_corpus.empty()) {
      const EvalCorpus corpus = load_corpus(run_corpus, seq, run_batch);
      if (corpus.sequences.size() < run_batch) {
        throw ConfigError("corpus holds fewer than --batch full sequences");
      }
      corpus.validate(cfg.vocab_size);
      tokens = corpus_batch(corpus, 0, run_batch);
    } else {
      std::mt19937_64 rng(run_seed);
      tokens.batch = run_batch;
      tokens.seq = seq;
      for (std::size_t i = 0; i < run_batch * seq; ++i) {
        tokens.ids.push_back(static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(cfg.vocab_size)));
      }
    }
    Tensor logits;
    if (choice.kind == ExecutorKind::kCqil) {
      WorkerPool pool(static_cast<std::size_t>(choice.plan.group_size));
      inject_transfer_delay(pool, choice.transfer_delay);
      CqilResult r = forward_cqil(tokens, model, choice.plan, pool);
      if (!run_trace.empty()) write_file(run_trace, records_to_jsonl(r.records));
      logits = std::move(r.trace.logits);
    } else {
      logits = executor_logits(tokens, model, choice);
    }
    const auto d = logits.data();
    const std::string_view bytes(reinterpret_cast<const char*>(d.data()),
                                 d.size() * sizeof(float));
    out << "executor: " << executor_name(choice.kind) << "\n"
        << "logits_shape: " << shape_str(logits.shape()) << "\n"
        << "logits_sha256: " << sha256_hex(bytes) << "\n";
    return kExitOk;
  }

  if (*sim_cmd) {
    const Model model = load_model(sim_model.config, sim_model.weights);
    const SimilarityMatrix m = input_similarity_matrix(model, corpus_for(sim_corpus, model));
    emit(sim_out,
         sim_out.format == "json" ? similarity_to_json(m).dump(2) + "\n" : similarity_to_csv(m),
         out);
    return kExitOk;
  }

  if (*sens_cmd) {
    const Model model = load_model(sens_model.config, sens_model.weights);
    const SensitivityGrid g =
        sensitivity_sweep(model, corpus_for(sens_corpus, model), max_k);
    emit(sens_out,
         sens_out.format == "json" ? sensitivity_to_json(g).dump(2) + "\n"
                                   : sensitivity_to_csv(g),
         out);
    return kExitOk;
  }

  if (*ppl_cmd) {
    const Model model = load_model(ppl_model.config, ppl_model.weights);
    const ExecutorChoice choice = make_choice(ppl_exec, ppl_plan, model.config.n_layers);
    const double ppl = perplexity(model, corpus_for(ppl_corpus, model), choice);
    out << "perplexity: " << std::setprecision(17) << ppl << "\n";
    return kExitOk;
  }

  if (*bench_cmd) {
    bench_opts.batch_sizes = parse_sizes(batch_sizes);
    bench_opts.transfer_delay = std::chrono::microseconds(bench_delay);
    Model model;
    if (!bench_model.weights.empty()) {
      model = load_model(bench_model.config, bench_model.weights);
    } else {
      const ModelConfig cfg =
          bench_model.config.empty() ? desk_config() : load_config(bench_model.config);
      model = make_random_model(cfg, bench_opts.seed);
    }
    const PartitionPlan plan = make_plan(bench_plan, model.config.n_layers);
    const LatencyReport report = run_latency_benchmark(model, plan, bench_opts);
    emit(bench_out,
         bench_out.format == "json" ? latency_to_json(report).dump(2) + "\n"
                                    : latency_to_csv(report),
         out);
    return kExitOk;
  }

  if (*cost_cmd) {
    const CostModelReport r = cost_model_table();
    std::string text;
    if (cost_out.format == "csv") {
      text = cost_table_csv(r);
    } else if (cost_out.format == "json") {
      text = cost_table_json(r).dump(2) + "\n";
    } else {
      text = cost_table_text(r);
    }
    emit(cost_out, text, out);
    return kExitOk;
  }

  if (*fx_cmd) {
    TrainProgress progress;
    if (!fx_quiet) {
      progress = [&](int step, double loss) {
        if (step % 50 == 0 || step + 1 == fx_opts.train.steps) {
          out << "step " << step << " loss " << std::fixed << std::setprecision(4)
              << loss << std::defaultfloat << std::endl;
        }
      };
    }
    const DeskFixture fx = generate_fixture(fx_opts, progress);
    write_fixture(fx, fx_dir);
    const Model& m = fx.model;
    const double ppl = perplexity(m, corpus_from_text(fx.heldout_text,
                                                      static_cast<std::size_t>(m.config.max_seq_len)));
    out << "wrote " << fx_dir << "\n"
        << "heldout_perplexity: " << fmt_double(ppl) << "\n"
        << "model.cqw sha256: " << sha256_file(std::filesystem::path(fx_dir) / "model.cqw")
        << "\n";
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out,
                 std::ostream& err) {
  try {
    return run_app(argc, argv, out, err);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PlanError& e) {
    err << "error: invalid plan: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace cqil
