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

#include <doctest.h>

#include <cmath>

#include "cqil/analysis.hpp"
#include "cqil/errors.hpp"
#include "cqil/executor.hpp"
#include "oracles.hpp"

using namespace cqil;

namespace {

EvalCorpus random_corpus(std::size_t n, std::size_t T, int vocab, std::uint64_t seed) {
  const TokenBatch tb = oracle::random_tokens(n, T, vocab, seed);
  EvalCorpus c;
  c.seq_len = T;
  for (std::size_t b = 0; b < n; ++b) {
    c.sequences.emplace_back(tb.ids.begin() + b * T, tb.ids.begin() + (b + 1) * T);
  }
  return c;
}

double oracle_perplexity(const EvalCorpus& c, const std::function<oracle::Vec(const TokenBatch&)>& lg,
                         std::size_t V) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < c.sequences.size(); ++i) {
    const TokenBatch tb = corpus_batch(c, i, i + 1);
    const auto [s, n] = oracle::nll(lg(tb), tb, V);
    sum += s;
    count += n;
  }
  return std::exp(sum / static_cast<double>(count));
}

}  // namespace

TEST_CASE("byte corpus windows") {
  const EvalCorpus c = corpus_from_text("abcdefg", 4);
  REQUIRE(c.sequences.size() == 2);
  CHECK(c.sequences[0] == std::vector<std::int32_t>{kBosToken, 'a', 'b', 'c'});
  CHECK(c.sequences[1] == std::vector<std::int32_t>{kBosToken, 'd', 'e', 'f'});
  CHECK(corpus_from_text("abcdefg", 4, 1).sequences.size() == 1);
  CHECK(corpus_from_text("ab", 4).sequences.empty());
  CHECK_THROWS_AS(corpus_from_text("abc", 1), FormatError);
  const EvalCorpus hi = corpus_from_text("\xff\x80", 3);
  CHECK(hi.sequences[0] == std::vector<std::int32_t>{kBosToken, 255, 128});
  CHECK_THROWS_AS(hi.validate(200), FormatError);
  const TokenBatch b = corpus_batch(c, 0, 2);
  CHECK(b.batch == 2);
  CHECK(b.seq == 4);
  CHECK(b.at(1, 3) == 'f');
}

TEST_CASE("uniform logits give perplexity equal to the vocabulary size") {
  Model m = make_random_model(oracle::small_config(3, 16, 2, 32, 257, 16), 1);
  std::fill(m.output_projection.data().begin(), m.output_projection.data().end(), 0.0f);
  const EvalCorpus c = random_corpus(5, 16, 257, 2);
  CHECK(std::abs(perplexity(m, c) - 257.0) < 1e-3);
}

TEST_CASE("perplexity matches the oracle and ignores sequence order") {
  const ModelConfig cfg = oracle::small_config(3, 16, 2, 32, 19, 8);
  const Model m = make_random_model(cfg, 3, 0.3);
  EvalCorpus c = random_corpus(11, 8, 19, 4);
  const double ppl = perplexity(m, c);
  const double ref = oracle_perplexity(c, [&](const TokenBatch& tb) { return oracle::forward(tb, m).logits; },
                                       19);
  CHECK(std::abs(ppl - ref) / ref < 1e-5);
  std::reverse(c.sequences.begin(), c.sequences.end());
  CHECK(std::abs(perplexity(m, c) - ppl) / ppl < 1e-12);
  CHECK_THROWS_AS(perplexity(m, EvalCorpus{8, {}}), FormatError);
}

TEST_CASE("executor choices") {
  const ModelConfig cfg = oracle::small_config(6);
  const Model m = make_random_model(cfg, 5, 0.2);
  const EvalCorpus c = random_corpus(9, 8, 19, 6);
  const double seq = perplexity(m, c);

  ExecutorChoice cq;
  cq.kind = ExecutorKind::kCqil;
  cq.plan = build_plan(6, 1, 1, 6, 0);
  CHECK(perplexity(m, c, cq) == seq);

  cq.plan = build_plan(6, 2, 3, 6, 1);
  ExecutorChoice gr = cq;
  gr.kind = ExecutorKind::kGroupedReference;
  CHECK(perplexity(m, c, cq) == perplexity(m, c, gr));

  ExecutorChoice af;
  af.kind = ExecutorKind::kAttnFfnParallel;
  af.first = 2;
  af.last = 4;
  const double ref = oracle_perplexity(
      c,
      [&](const TokenBatch& tb) {
        oracle::Vec x = oracle::embed(tb, m);
        const std::size_t rows = tb.batch * tb.seq;
        for (int l = 1; l <= 6; ++l) {
          const auto& lw = m.layers[l - 1];
          const oracle::Vec a = oracle::attention(x, tb.batch, tb.seq, lw, cfg);
          if (l >= 2 && l <= 4) {
            x = oracle::plus(oracle::plus(x, a), oracle::ffn(x, rows, lw, cfg));
          } else {
            const oracle::Vec h = oracle::plus(x, a);
            x = oracle::plus(h, oracle::ffn(h, rows, lw, cfg));
          }
        }
        return oracle::logits(x, m, rows);
      },
      19);
  CHECK(std::abs(perplexity(m, c, af) - ref) / ref < 1e-5);

  CHECK(parse_executor("grouped") == ExecutorKind::kGroupedReference);
  CHECK(executor_name(ExecutorKind::kAttnFfnParallel) == "attn-ffn-parallel");
  CHECK(parse_executor(executor_name(ExecutorKind::kCqil)) == ExecutorKind::kCqil);
  CHECK_THROWS_AS(parse_executor("pipeline"), ConfigError);
}

TEST_CASE("similarity matrix") {
  SUBCASE("zero-weight model gives all ones") {
    Model m = make_random_model(oracle::small_config(4), 7);
    for (auto& lw : m.layers) {
      for (Tensor* t : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.w1, &lw.b1, &lw.w2, &lw.b2}) {
        std::fill(t->data().begin(), t->data().end(), 0.0f);
      }
    }
    const SimilarityMatrix s = input_similarity_matrix(m, random_corpus(3, 8, 19, 8));
    for (double v : s.values) CHECK(std::abs(v - 1.0) < 1e-12);
  }
  SUBCASE("single layer") {
    const SimilarityMatrix s =
        input_similarity_matrix(make_random_model(oracle::small_config(1), 9), random_corpus(2, 8, 19, 10));
    REQUIRE(s.values.size() == 1);
    CHECK(s.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("matches a per-token double loop") {
    const Model m = make_random_model(oracle::small_config(5), 11, 0.3);
    const EvalCorpus c = random_corpus(9, 8, 19, 12);
    const SimilarityMatrix s = input_similarity_matrix(m, c);
    CHECK(s.samples == 9 * 8);
    std::vector<double> sum(25, 0.0);
    for (std::size_t i = 0; i < 9; ++i) {
      const ForwardTrace tr = forward_sequential(corpus_batch(c, i, i + 1), m);
      for (std::size_t t = 0; t < 8; ++t) {
        for (int l = 0; l < 5; ++l) {
          for (int k = 0; k < 5; ++k) {
            oracle::Vec a(16), b(16);
            for (std::size_t h = 0; h < 16; ++h) {
              a[h] = tr.inputs[l][t * 16 + h];
              b[h] = tr.inputs[k][t * 16 + h];
            }
            sum[l * 5 + k] += oracle::cosine(a.data(), b.data(), 16);
          }
        }
      }
    }
    for (int l = 1; l <= 5; ++l) {
      for (int k = 1; k <= 5; ++k) {
        CHECK(std::abs(s.at(l, k) - sum[(l - 1) * 5 + k - 1] / 72.0) < 1e-6);
        CHECK(std::abs(s.at(l, k) - s.at(k, l)) < 1e-6);
        CHECK(s.at(l, k) <= 1.0);
        CHECK(s.at(l, k) >= -1.0);
      }
      CHECK(std::abs(s.at(l, l) - 1.0) < 1e-6);
    }
  }
  SUBCASE("exports") {
    const SimilarityMatrix s =
        input_similarity_matrix(make_random_model(oracle::small_config(3), 13), random_corpus(2, 8, 19, 14));
    const std::string csv = similarity_to_csv(s);
    CHECK(csv.substr(0, csv.find('\n')) == "layer,1,2,3");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    const nlohmann::json j = similarity_to_json(s);
    CHECK(j["matrix"].size() == 3);
    CHECK(j["matrix"][1][2].get<double>() == s.at(2, 3));
  }
}

TEST_CASE("substitution sensitivity") {
  const ModelConfig cfg = oracle::small_config(5);
  Model m = make_random_model(cfg, 15, 0.3);
  const EvalCorpus c = random_corpus(6, 8, 19, 16);
  const double base = perplexity(m, c);
  for (int l = 1; l <= 5; ++l) CHECK(substitution_sensitivity(m, c, l, 0) == base);
  CHECK_THROWS_AS(substitution_sensitivity(m, c, 3, 3), ConfigError);
  CHECK_THROWS_AS(substitution_sensitivity(m, c, 0, 0), ConfigError);
  CHECK_THROWS_AS(substitution_sensitivity(m, c, 6, 1), ConfigError);
  CHECK_THROWS_AS(substitution_sensitivity(m, c, 3, -1), ConfigError);

  SUBCASE("splice-and-rerun oracle") {
    const int layer = 3, k = 1;
    const double ref = oracle_perplexity(
        c,
        [&](const TokenBatch& tb) {
          const std::size_t rows = tb.batch * tb.seq;
          std::vector<oracle::Vec> xs{oracle::embed(tb, m)};
          for (int l = 1; l <= 5; ++l) {
            const auto& lw = m.layers[l - 1];
            const oracle::Vec& y = l == layer ? xs[l - 1 - k] : xs.back();
            const oracle::Vec a = oracle::attention(y, tb.batch, tb.seq, lw, cfg);
            xs.push_back(oracle::plus(oracle::plus(xs.back(), a), oracle::ffn(oracle::plus(y, a), rows, lw, cfg)));
          }
          return oracle::logits(xs.back(), m, rows);
        },
        19);
    const double got = substitution_sensitivity(m, c, layer, k);
    CHECK(got != base);
    CHECK(std::abs(got - ref) / ref < 1e-5);
  }
  SUBCASE("a zero layer ignores its input") {
    for (Tensor* t : {&m.layers[3].wv, &m.layers[3].w1, &m.layers[3].w2, &m.layers[3].b2, &m.layers[3].b1}) {
      std::fill(t->data().begin(), t->data().end(), 0.0f);
    }
    const double b = perplexity(m, c);
    for (int k = 1; k <= 3; ++k) CHECK(substitution_sensitivity(m, c, 4, k) == b);
  }
}

TEST_CASE("sensitivity sweep") {
  const Model m = make_random_model(oracle::small_config(6), 17, 0.3);
  const EvalCorpus c = random_corpus(3, 8, 19, 18);
  const SensitivityGrid g1 = sensitivity_sweep(m, c, 1);
  CHECK(g1.entries.size() == 5);
  const SensitivityGrid g = sensitivity_sweep(m, c, 3);
  CHECK(g.entries.size() == 1 + 2 + 3 + 3 + 3);
  CHECK(g.baseline == perplexity(m, c));
  for (const SensitivityEntry& e : g.entries) {
    CHECK(std::isfinite(e.perplexity));
    CHECK(e.perplexity > 0.0);
    CHECK(e.offset <= e.layer - 1);
    CHECK(e.perplexity == substitution_sensitivity(m, c, e.layer, e.offset));
  }
  CHECK_FALSE(g.at(2, 2).has_value());
  CHECK_THROWS_AS(sensitivity_sweep(m, c, 0), ConfigError);

  const std::string csv = sensitivity_to_csv(g);
  CHECK(csv.substr(0, csv.find('\n')) == "k,1,2,3,4,5,6");
  CHECK(csv.find("\n3,,,,") != std::string::npos);
  CHECK(sensitivity_to_json(g)["entries"].size() == g.entries.size());
}
