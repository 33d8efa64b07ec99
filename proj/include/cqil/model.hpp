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

#ifndef CQIL_MODEL_HPP_
#define CQIL_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cqil/tensor.hpp"

namespace cqil {

inline constexpr const char* kLearnedAbsolute = "learned-absolute";

struct ModelConfig {
  int n_layers = 0;
  int hidden = 0;
  int n_heads = 0;
  int head_dim = 0;
  int ffn_hidden = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  float norm_eps = 1e-5f;
  Activation activation = Activation::kGelu;
  std::string positional = kLearnedAbsolute;

  // Throws ConfigError on any violated invariant (n_heads * head_dim ==
  // hidden, positive sizes, n_layers >= 0, supported positional scheme).
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// One pre-norm decoder layer. Projections are stored input-major so that a
// row vector x maps as x * W: wq/wk/wv/wo are [H x H] with head i occupying
// columns [i*d_k, (i+1)*d_k); w1 is [H x F], w2 is [F x H].
struct LayerWeights {
  Tensor attn_norm_gain;
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wo;
  Tensor ffn_norm_gain;
  Tensor w1;
  Tensor b1;
  Tensor w2;
  Tensor b2;
};

struct Model {
  ModelConfig config;
  Tensor token_embedding;     // [vocab x H]
  Tensor position_embedding;  // [max_seq_len x H]
  std::vector<LayerWeights> layers;
  Tensor final_norm_gain;     // [H]
  Tensor output_projection;   // [H x vocab]

  // Config invariants, layer count, every tensor shape, finiteness.
  void validate() const;
};

// Zero-initialised model with every tensor at its schema shape.
Model allocate_model(const ModelConfig& config);

// Weights ~ N(0, weight_std), biases ~ N(0, weight_std), embeddings ~ N(0, 1),
// norm gains 1. Deterministic for a given seed.
Model make_random_model(const ModelConfig& config, std::uint64_t seed,
                        float weight_std = 0.02f);

// Name and shape of every tensor a model with this config carries, in
// canonical order.
std::vector<std::pair<std::string, Shape>> tensor_schema(
    const ModelConfig& config);

// Canonical tensor order: embeddings, then each layer's tensors in field
// order, then the final norm and output projection. Names look like
// "layers.3.wq" with 0-based layer indices.
std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const Model& model);
std::vector<std::pair<std::string, Tensor*>> named_tensors(Model& model);

// Token ids laid out [batch x seq] row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(std::size_t b, std::size_t t) const {
    return ids[b * seq + t];
  }
};

// x_1 .. x_{L+1} (or one entry per group boundary for grouped executors),
// each [B x T x H], plus logits [B x T x vocab].
struct ForwardTrace {
  std::vector<Tensor> inputs;
  Tensor logits;
};

// x_1 = token_embedding[id] + position_embedding[t]. Throws ConfigError for
// an out-of-range token or a sequence longer than max_seq_len.
Tensor embed(const TokenBatch& tokens, const Model& model);

// MHA(rmsnorm(x)) with a causal mask; no residual.
Tensor attn_branch(const Tensor& x, const LayerWeights& layer,
                   const ModelConfig& config);

// W2 f(W1 rmsnorm(x) + b1) + b2; no residual.
Tensor ffn_branch(const Tensor& x, const LayerWeights& layer,
                  const ModelConfig& config);

// h = x + ATTN(x); returns h + FFN(h). ATTN is evaluated once.
Tensor layer_forward(const Tensor& x, const LayerWeights& layer,
                     const ModelConfig& config);

// (x + ATTN(x)) + FFN(x): both branches read the same input.
Tensor attn_ffn_parallel_layer(const Tensor& x, const LayerWeights& layer,
                               const ModelConfig& config);

// rmsnorm(x, final gain) * output_projection; throws NumericError on NaN/Inf.
Tensor output_logits(const Tensor& x, const Model& model);

ForwardTrace forward_sequential(const TokenBatch& tokens, const Model& model);

// Layers first..last (1-based, inclusive) use attn_ffn_parallel_layer, all
// others layer_forward. Throws ConfigError unless 1 <= first <= last <= L.
ForwardTrace forward_attn_ffn_parallel(const TokenBatch& tokens,
                                       const Model& model, int first,
                                       int last);

}  // namespace cqil

#endif  // CQIL_MODEL_HPP_
