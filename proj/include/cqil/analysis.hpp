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

#ifndef CQIL_ANALYSIS_HPP_
#define CQIL_ANALYSIS_HPP_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cqil/model.hpp"
#include "cqil/partition.hpp"

namespace cqil {

// Byte-level tokenization: ids 0..255 are raw bytes, 256 is BOS.
inline constexpr std::int32_t kBosToken = 256;
inline constexpr int kByteVocabSize = 257;

struct EvalCorpus {
  std::size_t seq_len = 0;
  std::vector<std::vector<std::int32_t>> sequences;

  // Throws FormatError if empty, ragged, or holding ids >= vocab_size.
  void validate(int vocab_size) const;
};

// Cuts `text` into consecutive, non-overlapping windows of seq_len - 1 bytes,
// each prefixed with BOS; a trailing partial window is dropped.
// max_sequences == 0 keeps all windows.
EvalCorpus corpus_from_text(std::string_view text, std::size_t seq_len,
                            std::size_t max_sequences = 0);
EvalCorpus load_corpus(const std::filesystem::path& path, std::size_t seq_len,
                       std::size_t max_sequences = 0);

// Sequences [begin, end) as one [B x T] batch.
TokenBatch corpus_batch(const EvalCorpus& corpus, std::size_t begin,
                        std::size_t end);

// M[l][k] (1-based) = mean over every (sequence, position) of
// cos(x_l[b,t,:], x_k[b,t,:]) for the layer inputs x_1..x_L.
struct SimilarityMatrix {
  int n_layers = 0;
  std::vector<double> values;  // row-major L x L
  std::size_t samples = 0;     // token vectors averaged per entry

  double at(int l, int k) const {
    return values[static_cast<std::size_t>((l - 1) * n_layers + (k - 1))];
  }
};

SimilarityMatrix input_similarity_matrix(const Model& model,
                                         const EvalCorpus& corpus);

enum class ExecutorKind { kSequential, kGroupedReference, kCqil, kAttnFfnParallel };

ExecutorKind parse_executor(std::string_view name);
std::string_view executor_name(ExecutorKind kind);

struct ExecutorChoice {
  ExecutorKind kind = ExecutorKind::kSequential;
  PartitionPlan plan;       // grouped-reference and cqil
  int first = 1;            // attn-ffn-parallel range
  int last = 1;
  std::chrono::microseconds transfer_delay{0};  // cqil only
};

// Logits of one batch under the chosen executor.
Tensor executor_logits(const TokenBatch& tokens, const Model& model,
                       const ExecutorChoice& choice);

// exp of the mean next-token negative log-likelihood (natural log) over
// every position t < T-1 of every sequence.
double perplexity(const Model& model, const EvalCorpus& corpus,
                  const ExecutorChoice& choice = {});

// Perplexity of a forward pass in which layer `layer` evaluates its branch
// on x_{layer - offset} while its residual still starts from x_layer:
//   x_{l+1} = (x_l + a) + FFN_l(x_{l-k} + a),  a = ATTN_l(x_{l-k}).
// offset == 0 reproduces the baseline bit-exactly. Throws ConfigError unless
// 1 <= layer <= L and 0 <= offset <= layer - 1.
double substitution_sensitivity(const Model& model, const EvalCorpus& corpus,
                                int layer, int offset);

struct SensitivityEntry {
  int layer = 0;
  int offset = 0;
  double perplexity = 0.0;
};

struct SensitivityGrid {
  int n_layers = 0;
  int max_offset = 0;
  double baseline = 0.0;
  std::vector<SensitivityEntry> entries;  // layer-major, offset ascending

  std::optional<double> at(int layer, int offset) const;
};

// Every (l, k) with 1 <= l <= L and 1 <= k <= min(max_k, l - 1). Entries are
// independent runs and are evaluated on up to hardware_concurrency threads.
SensitivityGrid sensitivity_sweep(const Model& model, const EvalCorpus& corpus,
                                  int max_offset);

// First line is a header of layer indices.
std::string similarity_to_csv(const SimilarityMatrix& m);
nlohmann::json similarity_to_json(const SimilarityMatrix& m);
// Rows are offsets k, columns layers l; invalid cells are empty.
std::string sensitivity_to_csv(const SensitivityGrid& g);
nlohmann::json sensitivity_to_json(const SensitivityGrid& g);

}  // namespace cqil

#endif  // CQIL_ANALYSIS_HPP_
