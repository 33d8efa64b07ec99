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

#include "cqil/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "cqil/errors.hpp"
#include "cqil/executor.hpp"
#include "cqil/weights_io.hpp"

namespace cqil {

namespace {

// Sequences per forward pass; batch items never interact, so this only
// trades memory for fewer passes.
constexpr std::size_t kEvalBatch = 8;

void require_nonempty(const EvalCorpus& corpus) {
  if (corpus.sequences.empty()) throw FormatError("evaluation corpus is empty");
}

struct NllSum {
  double total = 0.0;
  std::size_t count = 0;
};

void accumulate_nll(const Tensor& logits, const TokenBatch& tokens,
                    NllSum& acc) {
  const std::size_t vocab = logits.dim(2);
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t t = 0; t + 1 < tokens.seq; ++t) {
      const float* row = logits.ptr() + (b * tokens.seq + t) * vocab;
      double mx = row[0];
      for (std::size_t v = 1; v < vocab; ++v) mx = std::max<double>(mx, row[v]);
      double sum = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(row[v] - mx);
      const auto target = static_cast<std::size_t>(tokens.at(b, t + 1));
      acc.total += (mx + std::log(sum)) - row[target];
      ++acc.count;
    }
  }
}

double finish(const NllSum& acc) {
  if (acc.count == 0) {
    throw FormatError("corpus has no next-token predictions (seq_len < 2)");
  }
  return std::exp(acc.total / static_cast<double>(acc.count));
}

template <typename LogitsFn>
double corpus_perplexity(const EvalCorpus& corpus, LogitsFn&& logits_of) {
  require_nonempty(corpus);
  NllSum acc;
  for (std::size_t i = 0; i < corpus.sequences.size(); i += kEvalBatch) {
    const std::size_t end = std::min(corpus.sequences.size(), i + kEvalBatch);
    const TokenBatch batch = corpus_batch(corpus, i, end);
    accumulate_nll(logits_of(batch), batch, acc);
  }
  return finish(acc);
}

Tensor substituted_logits(const TokenBatch& tokens, const Model& model,
                          int layer, int offset) {
  const ModelConfig& cfg = model.config;
  std::vector<Tensor> stream;
  stream.reserve(model.layers.size() + 1);
  stream.push_back(embed(tokens, model));
  for (int l = 1; l <= cfg.n_layers; ++l) {
    const LayerWeights& lw = model.layers[static_cast<std::size_t>(l - 1)];
    const Tensor& x = stream[static_cast<std::size_t>(l - 1)];
    if (l != layer) {
      stream.push_back(layer_forward(x, lw, cfg));
      continue;
    }
    const Tensor& y = stream[static_cast<std::size_t>(l - 1 - offset)];
    const Tensor a = attn_branch(y, lw, cfg);
    const Tensor f = ffn_branch(add(y, a), lw, cfg);
    Tensor next = add(x, a);
    add_inplace(next, f);
    stream.push_back(std::move(next));
  }
  return output_logits(stream.back(), model);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void EvalCorpus::validate(int vocab_size) const {
  require_nonempty(*this);
  for (const auto& seq : sequences) {
    if (seq.size() != seq_len) {
      throw FormatError("corpus sequence of length " +
                        std::to_string(seq.size()) + ", expected " +
                        std::to_string(seq_len));
    }
    for (std::int32_t id : seq) {
      if (id < 0 || id >= vocab_size) {
        throw FormatError("corpus token " + std::to_string(id) +
                          " outside vocab of " + std::to_string(vocab_size));
      }
    }
  }
}

EvalCorpus corpus_from_text(std::string_view text, std::size_t seq_len,
                            std::size_t max_sequences) {
  if (seq_len < 2) throw FormatError("corpus seq_len must be >= 2");
  EvalCorpus corpus;
  corpus.seq_len = seq_len;
  const std::size_t body = seq_len - 1;
  for (std::size_t pos = 0; pos + body <= text.size(); pos += body) {
    if (max_sequences && corpus.sequences.size() == max_sequences) break;
    std::vector<std::int32_t> seq;
    seq.reserve(seq_len);
    seq.push_back(kBosToken);
    for (std::size_t i = 0; i < body; ++i) {
      seq.push_back(static_cast<unsigned char>(text[pos + i]));
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

EvalCorpus load_corpus(const std::filesystem::path& path, std::size_t seq_len,
                       std::size_t max_sequences) {
  EvalCorpus corpus = corpus_from_text(read_file(path), seq_len, max_sequences);
  require_nonempty(corpus);
  return corpus;
}

TokenBatch corpus_batch(const EvalCorpus& corpus, std::size_t begin,
                        std::size_t end) {
  TokenBatch batch;
  batch.batch = end - begin;
  batch.seq = corpus.seq_len;
  batch.ids.reserve(batch.batch * batch.seq);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& seq = corpus.sequences.at(i);
    batch.ids.insert(batch.ids.end(), seq.begin(), seq.end());
  }
  return batch;
}

SimilarityMatrix input_similarity_matrix(const Model& model,
                                         const EvalCorpus& corpus) {
  require_nonempty(corpus);
  const int n_layers = model.config.n_layers;
  const auto nl = static_cast<std::size_t>(n_layers);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  SimilarityMatrix m;
  m.n_layers = n_layers;
  m.values.assign(nl * nl, 0.0);
  for (std::size_t i = 0; i < corpus.sequences.size(); i += kEvalBatch) {
    const std::size_t end = std::min(corpus.sequences.size(), i + kEvalBatch);
    const ForwardTrace trace = forward_sequential(corpus_batch(corpus, i, end), model);
    const std::size_t tokens = (end - i) * corpus.seq_len;
    for (std::size_t r = 0; r < tokens; ++r) {
      for (std::size_t l = 0; l < nl; ++l) {
        std::span<const float> xl(trace.inputs[l].ptr() + r * h, h);
        m.values[l * nl + l] += cosine_similarity(xl, xl);
        for (std::size_t k = l + 1; k < nl; ++k) {
          std::span<const float> xk(trace.inputs[k].ptr() + r * h, h);
          const double c = cosine_similarity(xl, xk);
          m.values[l * nl + k] += c;
          m.values[k * nl + l] += c;
        }
      }
    }
    m.samples += tokens;
  }
  for (double& v : m.values) v /= static_cast<double>(m.samples);
  return m;
}

ExecutorKind parse_executor(std::string_view name) {
  if (name == "sequential") return ExecutorKind::kSequential;
  if (name == "grouped" || name == "grouped-reference") {
    return ExecutorKind::kGroupedReference;
  }
  if (name == "cqil") return ExecutorKind::kCqil;
  if (name == "attn-ffn" || name == "attn-ffn-parallel") {
    return ExecutorKind::kAttnFfnParallel;
  }
  throw ConfigError("unknown executor '" + std::string(name) + "'");
}

std::string_view executor_name(ExecutorKind kind) {
  switch (kind) {
    case ExecutorKind::kSequential:
      return "sequential";
    case ExecutorKind::kGroupedReference:
      return "grouped-reference";
    case ExecutorKind::kCqil:
      return "cqil";
    case ExecutorKind::kAttnFfnParallel:
      return "attn-ffn-parallel";
  }
  return "unknown";
}

Tensor executor_logits(const TokenBatch& tokens, const Model& model,
                       const ExecutorChoice& choice) {
  switch (choice.kind) {
    case ExecutorKind::kSequential:
      return forward_sequential(tokens, model).logits;
    case ExecutorKind::kGroupedReference:
      return forward_grouped_reference(tokens, model, choice.plan).logits;
    case ExecutorKind::kCqil: {
      WorkerPool pool(static_cast<std::size_t>(choice.plan.group_size));
      inject_transfer_delay(pool, choice.transfer_delay);
      return forward_cqil(tokens, model, choice.plan, pool).trace.logits;
    }
    case ExecutorKind::kAttnFfnParallel:
      return forward_attn_ffn_parallel(tokens, model, choice.first, choice.last)
          .logits;
  }
  throw ConfigError("unknown executor kind");
}

double perplexity(const Model& model, const EvalCorpus& corpus,
                  const ExecutorChoice& choice) {
  corpus.validate(model.config.vocab_size);
  if (choice.kind == ExecutorKind::kCqil) {
    // One pool for the whole corpus rather than one per batch.
    WorkerPool pool(static_cast<std::size_t>(choice.plan.group_size));
    inject_transfer_delay(pool, choice.transfer_delay);
    return corpus_perplexity(corpus, [&](const TokenBatch& b) {
      return forward_cqil(b, model, choice.plan, pool).trace.logits;
    });
  }
  return corpus_perplexity(corpus, [&](const TokenBatch& b) {
    return executor_logits(b, model, choice);
  });
}

double substitution_sensitivity(const Model& model, const EvalCorpus& corpus,
                                int layer, int offset) {
  if (layer < 1 || layer > model.config.n_layers) {
    throw ConfigError("substitution layer " + std::to_string(layer) +
                      " outside 1.." + std::to_string(model.config.n_layers));
  }
  if (offset < 0 || offset > layer - 1) {
    throw ConfigError("substitution offset k=" + std::to_string(offset) +
                      " invalid for layer " + std::to_string(layer) +
                      " (need 0 <= k <= l-1)");
  }
  corpus.validate(model.config.vocab_size);
  return corpus_perplexity(corpus, [&](const TokenBatch& b) {
    return substituted_logits(b, model, layer, offset);
  });
}

std::optional<double> SensitivityGrid::at(int layer, int offset) const {
  for (const SensitivityEntry& e : entries) {
    if (e.layer == layer && e.offset == offset) return e.perplexity;
  }
  return std::nullopt;
}

SensitivityGrid sensitivity_sweep(const Model& model, const EvalCorpus& corpus,
                                  int max_offset) {
  if (max_offset < 1) throw ConfigError("max_k must be >= 1");
  SensitivityGrid grid;
  grid.n_layers = model.config.n_layers;
  grid.max_offset = max_offset;
  grid.baseline = perplexity(model, corpus);
  for (int l = 1; l <= grid.n_layers; ++l) {
    for (int k = 1; k <= std::min(max_offset, l - 1); ++k) {
      grid.entries.push_back({l, k, 0.0});
    }
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < grid.entries.size(); i = next++) {
      try {
        SensitivityEntry& e = grid.entries[i];
        e.perplexity = substitution_sensitivity(model, corpus, e.layer, e.offset);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(
      std::max(1u, std::thread::hardware_concurrency()), grid.entries.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(work);
  work();
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return grid;
}

std::string similarity_to_csv(const SimilarityMatrix& m) {
  std::ostringstream os;
  os << "layer";
  for (int k = 1; k <= m.n_layers; ++k) os << ',' << k;
  os << '\n';
  for (int l = 1; l <= m.n_layers; ++l) {
    os << l;
    for (int k = 1; k <= m.n_layers; ++k) os << ',' << fmt(m.at(l, k));
    os << '\n';
  }
  return os.str();
}

nlohmann::json similarity_to_json(const SimilarityMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int l = 1; l <= m.n_layers; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 1; k <= m.n_layers; ++k) row.push_back(m.at(l, k));
    rows.push_back(std::move(row));
  }
  return {{"n_layers", m.n_layers}, {"samples", m.samples}, {"matrix", rows}};
}

std::string sensitivity_to_csv(const SensitivityGrid& g) {
  std::ostringstream os;
  os << "k";
  for (int l = 1; l <= g.n_layers; ++l) os << ',' << l;
  os << '\n';
  for (int k = 1; k <= g.max_offset; ++k) {
    os << k;
    for (int l = 1; l <= g.n_layers; ++l) {
      os << ',';
      if (auto v = g.at(l, k)) os << fmt(*v);
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json sensitivity_to_json(const SensitivityGrid& g) {
  nlohmann::json entries = nlohmann::json::array();
  for (const SensitivityEntry& e : g.entries) {
    entries.push_back(
        {{"layer", e.layer}, {"k", e.offset}, {"perplexity", e.perplexity}});
  }
  return {{"n_layers", g.n_layers},
          {"max_k", g.max_offset},
          {"baseline", g.baseline},
          {"entries", entries}};
}

}  // namespace cqil
