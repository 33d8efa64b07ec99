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

#include "cqil/model.hpp"

#include <cmath>
#include <random>

#include "cqil/errors.hpp"

namespace cqil {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ShapeError("tensor '" + name + "' has shape " +
                      shape_str(t.shape()) + ", expected " + shape_str(shape));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 0) throw ConfigError("n_layers must be >= 0");
  if (hidden <= 0 || n_heads <= 0 || head_dim <= 0 || ffn_hidden <= 0 ||
      vocab_size <= 0 || max_seq_len <= 0) {
    throw ConfigError(
        "hidden, n_heads, head_dim, ffn_hidden, vocab_size and max_seq_len "
        "must be positive");
  }
  if (n_heads * head_dim != hidden) {
    throw ConfigError("n_heads * head_dim (" + std::to_string(n_heads) + " * " +
                      std::to_string(head_dim) + ") != hidden (" +
                      std::to_string(hidden) + ")");
  }
  if (!(norm_eps > 0.0f) || !std::isfinite(norm_eps)) {
    throw ConfigError("norm_eps must be a positive finite number");
  }
  if (positional != kLearnedAbsolute) {
    throw ConfigError("unsupported positional scheme '" + positional + "'");
  }
}

Model allocate_model(const ModelConfig& config) {
  config.validate();
  const std::size_t h = sz(config.hidden);
  const std::size_t f = sz(config.ffn_hidden);
  Model m;
  m.config = config;
  m.token_embedding = Tensor({sz(config.vocab_size), h});
  m.position_embedding = Tensor({sz(config.max_seq_len), h});
  m.layers.resize(sz(config.n_layers));
  for (LayerWeights& lw : m.layers) {
    lw.attn_norm_gain = Tensor::filled({h}, 1.0f);
    lw.wq = Tensor({h, h});
    lw.wk = Tensor({h, h});
    lw.wv = Tensor({h, h});
    lw.wo = Tensor({h, h});
    lw.ffn_norm_gain = Tensor::filled({h}, 1.0f);
    lw.w1 = Tensor({h, f});
    lw.b1 = Tensor({f});
    lw.w2 = Tensor({f, h});
    lw.b2 = Tensor({h});
  }
  m.final_norm_gain = Tensor::filled({h}, 1.0f);
  m.output_projection = Tensor({h, sz(config.vocab_size)});
  return m;
}

Model make_random_model(const ModelConfig& config, std::uint64_t seed,
                        float weight_std) {
  Model m = allocate_model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> weight(0.0f, weight_std);
  std::normal_distribution<float> unit(0.0f, 1.0f);
  for (auto& [name, t] : named_tensors(m)) {
    const bool is_gain = name.ends_with("norm_gain");
    const bool is_embedding = name.ends_with("_embedding");
    if (is_gain) continue;
    for (float& v : t->data()) v = is_embedding ? unit(rng) : weight(rng);
  }
  return m;
}

void Model::validate() const {
  config.validate();
  if (layers.size() != sz(config.n_layers)) {
    throw ConfigError("model has " + std::to_string(layers.size()) +
                      " layers, config says " +
                      std::to_string(config.n_layers));
  }
  const auto want = tensor_schema(config);
  const auto have = named_tensors(*this);
  for (std::size_t i = 0; i < want.size(); ++i) {
    expect_shape(*have[i].second, want[i].second, have[i].first);
    check_finite(*have[i].second, have[i].first);
  }
}

std::vector<std::pair<std::string, Shape>> tensor_schema(
    const ModelConfig& config) {
  config.validate();
  const std::size_t h = sz(config.hidden);
  const std::size_t f = sz(config.ffn_hidden);
  const std::size_t v = sz(config.vocab_size);
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("token_embedding", Shape{v, h});
  out.emplace_back("position_embedding", Shape{sz(config.max_seq_len), h});
  for (int i = 0; i < config.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm_gain", Shape{h});
    out.emplace_back(p + "wq", Shape{h, h});
    out.emplace_back(p + "wk", Shape{h, h});
    out.emplace_back(p + "wv", Shape{h, h});
    out.emplace_back(p + "wo", Shape{h, h});
    out.emplace_back(p + "ffn_norm_gain", Shape{h});
    out.emplace_back(p + "w1", Shape{h, f});
    out.emplace_back(p + "b1", Shape{f});
    out.emplace_back(p + "w2", Shape{f, h});
    out.emplace_back(p + "b2", Shape{h});
  }
  out.emplace_back("final_norm_gain", Shape{h});
  out.emplace_back("output_projection", Shape{h, v});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const Model& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(4 + model.layers.size() * 10);
  out.emplace_back("token_embedding", &model.token_embedding);
  out.emplace_back("position_embedding", &model.position_embedding);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerWeights& lw = model.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm_gain", &lw.attn_norm_gain);
    out.emplace_back(p + "wq", &lw.wq);
    out.emplace_back(p + "wk", &lw.wk);
    out.emplace_back(p + "wv", &lw.wv);
    out.emplace_back(p + "wo", &lw.wo);
    out.emplace_back(p + "ffn_norm_gain", &lw.ffn_norm_gain);
    out.emplace_back(p + "w1", &lw.w1);
    out.emplace_back(p + "b1", &lw.b1);
    out.emplace_back(p + "w2", &lw.w2);
    out.emplace_back(p + "b2", &lw.b2);
  }
  out.emplace_back("final_norm_gain", &model.final_norm_gain);
  out.emplace_back("output_projection", &model.output_projection);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(Model& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : named_tensors(static_cast<const Model&>(model))) {
    out.emplace_back(std::move(name), const_cast<Tensor*>(t));
  }
  return out;
}

Tensor embed(const TokenBatch& tokens, const Model& model) {
  const ModelConfig& cfg = model.config;
  if (tokens.ids.size() != tokens.batch * tokens.seq) {
    throw ShapeError("token batch holds " + std::to_string(tokens.ids.size()) +
                     " ids, expected " +
                     std::to_string(tokens.batch * tokens.seq));
  }
  if (tokens.seq > sz(cfg.max_seq_len)) {
    throw ConfigError("sequence length " + std::to_string(tokens.seq) +
                      " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
  const std::size_t h = sz(cfg.hidden);
  Tensor x({tokens.batch, tokens.seq, h});
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    for (std::size_t t = 0; t < tokens.seq; ++t) {
      const std::int32_t id = tokens.at(b, t);
      if (id < 0 || id >= cfg.vocab_size) {
        throw ConfigError("token id " + std::to_string(id) +
                          " out of range for vocab_size " +
                          std::to_string(cfg.vocab_size));
      }
      const float* te = model.token_embedding.ptr() + sz(id) * h;
      const float* pe = model.position_embedding.ptr() + t * h;
      float* xr = x.ptr() + (b * tokens.seq + t) * h;
      for (std::size_t i = 0; i < h; ++i) xr[i] = te[i] + pe[i];
    }
  }
  return x;
}

Tensor attn_branch(const Tensor& x, const LayerWeights& layer,
                   const ModelConfig& config) {
  const std::size_t h = sz(config.hidden);
  if (x.rank() != 3 || x.dim(2) != h) {
    throw ShapeError("attn_branch: input " + shape_str(x.shape()) +
                     " is not [B x T x " + std::to_string(h) + "]");
  }
  if (x.dim(1) > sz(config.max_seq_len)) {
    throw ShapeError("attn_branch: T exceeds max_seq_len");
  }
  const std::size_t batch = x.dim(0);
  const std::size_t seq = x.dim(1);
  const std::size_t heads = sz(config.n_heads);
  const std::size_t dk = sz(config.head_dim);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));

  const Tensor xn = rmsnorm(x, layer.attn_norm_gain, config.norm_eps);
  const Tensor q = matmul(xn, layer.wq);
  const Tensor k = matmul(xn, layer.wk);
  const Tensor v = matmul(xn, layer.wv);

  Tensor heads_out({batch, seq, h});
  std::vector<float> kt(dk * seq);  // one head's keys, [d_k x T]
  std::vector<float> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* qb = q.ptr() + b * seq * h;
    const float* kb = k.ptr() + b * seq * h;
    const float* vb = v.ptr() + b * seq * h;
    float* ob = heads_out.ptr() + b * seq * h;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t col = hd * dk;
      for (std::size_t t = 0; t < seq; ++t) {
        for (std::size_t j = 0; j < dk; ++j) kt[j * seq + t] = kb[t * h + col + j];
      }
      for (std::size_t t = 0; t < seq; ++t) {
        // Causal: only keys 0..t ever enter the score, softmax and value sums.
        const std::size_t n_keys = t + 1;
        std::fill(scores.begin(), scores.begin() + n_keys, 0.0f);
        const float* qr = qb + t * h + col;
        for (std::size_t j = 0; j < dk; ++j) {
          const float qv = qr[j];
          const float* kr = kt.data() + j * seq;
          for (std::size_t s = 0; s < n_keys; ++s) scores[s] += qv * kr[s];
        }
        for (std::size_t s = 0; s < n_keys; ++s) scores[s] *= scale;
        softmax_inplace(std::span<float>(scores.data(), n_keys));
        float* orow = ob + t * h + col;
        for (std::size_t s = 0; s < n_keys; ++s) {
          const float p = scores[s];
          const float* vr = vb + s * h + col;
          for (std::size_t j = 0; j < dk; ++j) orow[j] += p * vr[j];
        }
      }
    }
  }
  return matmul(heads_out, layer.wo);
}

Tensor ffn_branch(const Tensor& x, const LayerWeights& layer,
                  const ModelConfig& config) {
  const std::size_t h = sz(config.hidden);
  if (x.rank() != 3 || x.dim(2) != h) {
    throw ShapeError("ffn_branch: input " + shape_str(x.shape()) +
                     " is not [B x T x " + std::to_string(h) + "]");
  }
  Tensor u = matmul(rmsnorm(x, layer.ffn_norm_gain, config.norm_eps), layer.w1);
  add_row_bias(u, layer.b1);
  activation_inplace(u, config.activation);
  Tensor out = matmul(u, layer.w2);
  add_row_bias(out, layer.b2);
  return out;
}

Tensor layer_forward(const Tensor& x, const LayerWeights& layer,
                     const ModelConfig& config) {
  Tensor h = add(x, attn_branch(x, layer, config));
  add_inplace(h, ffn_branch(h, layer, config));
  return h;
}

Tensor attn_ffn_parallel_layer(const Tensor& x, const LayerWeights& layer,
                               const ModelConfig& config) {
  Tensor out = add(x, attn_branch(x, layer, config));
  add_inplace(out, ffn_branch(x, layer, config));
  return out;
}

Tensor output_logits(const Tensor& x, const Model& model) {
  Tensor logits = matmul(
      rmsnorm(x, model.final_norm_gain, model.config.norm_eps),
      model.output_projection);
  check_finite(logits, "logits");
  return logits;
}

ForwardTrace forward_sequential(const TokenBatch& tokens, const Model& model) {
  ForwardTrace trace;
  trace.inputs.reserve(model.layers.size() + 1);
  trace.inputs.push_back(embed(tokens, model));
  for (const LayerWeights& lw : model.layers) {
    trace.inputs.push_back(layer_forward(trace.inputs.back(), lw, model.config));
  }
  trace.logits = output_logits(trace.inputs.back(), model);
  return trace;
}

ForwardTrace forward_attn_ffn_parallel(const TokenBatch& tokens,
                                       const Model& model, int first,
                                       int last) {
  const int n_layers = static_cast<int>(model.layers.size());
  if (first < 1 || first > last || last > n_layers) {
    throw ConfigError("attention-ffn parallel range [" + std::to_string(first) +
                      ", " + std::to_string(last) + "] invalid for " +
                      std::to_string(n_layers) + " layers");
  }
  ForwardTrace trace;
  trace.inputs.reserve(model.layers.size() + 1);
  trace.inputs.push_back(embed(tokens, model));
  for (int l = 1; l <= n_layers; ++l) {
    const LayerWeights& lw = model.layers[sz(l - 1)];
    const Tensor& x = trace.inputs.back();
    trace.inputs.push_back(l >= first && l <= last
                               ? attn_ffn_parallel_layer(x, lw, model.config)
                               : layer_forward(x, lw, model.config));
  }
  trace.logits = output_logits(trace.inputs.back(), model);
  return trace;
}

}  // namespace cqil
