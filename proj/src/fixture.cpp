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

#include "cqil/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cqil/analysis.hpp"
#include "cqil/errors.hpp"
#include "cqil/weights_io.hpp"

namespace cqil {

ModelConfig desk_config() {
  ModelConfig c;
  c.n_layers = 12;
  c.hidden = 64;
  c.n_heads = 4;
  c.head_dim = 16;
  c.ffn_hidden = 256;
  c.vocab_size = kByteVocabSize;
  c.max_seq_len = 64;
  c.norm_eps = 1e-5f;
  c.activation = Activation::kGelu;
  return c;
}

std::filesystem::path default_fixture_dir() {
  return std::filesystem::path(CQIL_SOURCE_DIR) / "data" / "desk";
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

class TextGen {
 public:
  explicit TextGen(std::uint64_t seed) : rng_(seed) {
    static const char* kSyllables[] = {"ka", "lo",  "mi", "ten", "sor", "va",
                                       "ri", "den", "pa", "lu",  "ne",  "tor",
                                       "fi", "sa",  "gor", "be", "mun", "ti",
                                       "ar", "el",  "os", "qui", "dra", "ven"};
    auto make_words = [&](std::size_t n, std::size_t max_syl) {
      std::vector<std::string> out;
      while (out.size() < n) {
        std::string w;
        const std::size_t syl = 1 + pick(max_syl);
        for (std::size_t i = 0; i < syl; ++i) w += kSyllables[pick(std::size(kSyllables))];
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
      }
      return out;
    };
    nouns_ = make_words(48, 3);
    verbs_ = make_words(32, 2);
    adjectives_ = make_words(24, 3);
    adverbs_ = make_words(12, 2);
    for (std::string& a : adverbs_) a += "ly";
  }

  std::string paragraph() {
    // Each paragraph talks about a handful of nouns.
    topic_.clear();
    for (int i = 0; i < 5; ++i) topic_.push_back(&nouns_[pick(nouns_.size())]);
    std::string out;
    const std::size_t n = 4 + pick(4);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += pick(6) == 0 ? quote() : sentence();
    }
    out += '\n';
    return out;
  }

 private:
  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  const std::string& noun() {
    return pick(4) ? *topic_[pick(topic_.size())] : nouns_[pick(nouns_.size())];
  }

  // Returns the phrase and whether it is plural.
  std::pair<std::string, bool> noun_phrase() {
    static const char* kSingular[] = {"the", "a", "every", "this", "one"};
    static const char* kPlural[] = {"the", "some", "many", "these", "two"};
    const bool plural = pick(3) == 0;
    std::string np = plural ? kPlural[pick(std::size(kPlural))]
                            : kSingular[pick(std::size(kSingular))];
    if (pick(2)) np += " " + adjectives_[pick(adjectives_.size())];
    np += " " + noun();
    if (plural) np += "s";
    return {np, plural};
  }

  std::string clause() {
    static const char* kPreps[] = {"in", "on", "under", "near", "with", "from"};
    auto [subject, plural] = noun_phrase();
    std::string verb = verbs_[pick(verbs_.size())];
    if (!plural) verb += "s";
    std::string c = subject + " " + verb;
    if (pick(3)) {
      c += " " + noun_phrase().first;
    } else {
      c += " " + adverbs_[pick(adverbs_.size())];
    }
    if (pick(3) == 0) {
      c += " " + std::string(kPreps[pick(std::size(kPreps))]) + " " +
           noun_phrase().first;
    }
    return c;
  }

  std::string sentence() {
    static const char* kConj[] = {"and", "but", "because", "while"};
    std::string s = clause();
    if (pick(3) == 0) {
      s += ", " + std::string(kConj[pick(std::size(kConj))]) + " " + clause();
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + (pick(8) == 0 ? "?" : ".");
  }

  std::string quote() {
    std::string q = clause();
    q[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(q[0])));
    return "\"" + q + ",\" said the " + noun() + ".";
  }

  std::mt19937_64 rng_;
  std::vector<std::string> nouns_, verbs_, adjectives_, adverbs_;
  std::vector<const std::string*> topic_;
};

}  // namespace

std::string synthetic_text(std::uint64_t seed, std::size_t n_bytes) {
  TextGen gen(seed);
  std::string out;
  out.reserve(n_bytes + 1024);
  while (out.size() < n_bytes) out += gen.paragraph();
  out.resize(n_bytes);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using Buf = std::vector<float>;

void rms_fwd(const float* x, const float* g, float* y, float* inv,
             std::size_t rows, std::size_t h, float eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * h;
    float ss = 0.0f;
    for (std::size_t i = 0; i < h; ++i) ss += xr[i] * xr[i];
    const float iv = 1.0f / std::sqrt(ss / static_cast<float>(h) + eps);
    inv[r] = iv;
    for (std::size_t i = 0; i < h; ++i) y[r * h + i] = xr[i] * iv * g[i];
  }
}

// dx += d rmsnorm / dx applied to dy; dg += d rmsnorm / dgain applied to dy.
void rms_bwd(const float* x, const float* g, const float* inv, const float* dy,
             float* dx, float* dg, std::size_t rows, std::size_t h) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * h;
    const float* dyr = dy + r * h;
    const float iv = inv[r];
    float dot = 0.0f;
    for (std::size_t i = 0; i < h; ++i) {
      dg[i] += dyr[i] * xr[i] * iv;
      dot += g[i] * dyr[i] * xr[i];
    }
    const float coef = iv * iv * iv * dot / static_cast<float>(h);
    for (std::size_t i = 0; i < h; ++i) {
      dx[r * h + i] += iv * g[i] * dyr[i] - xr[i] * coef;
    }
  }
}

void mm(const Buf& a, const Tensor& b, Buf& c, std::size_t m) {
  const std::size_t k = b.dim(0), n = b.dim(1);
  c.resize(m * n);
  matmul_into(std::span<const float>(a.data(), m * k), b.data(), c, m, k, n);
}

// c[m x n] = a[m x k] * b^T for b stored [n x k].
void mm_bt(const Buf& a, const Tensor& b, Buf& c, std::size_t m) {
  mm(a, transpose(b), c, m);
}

// c[m x n] += a^T b for a[r x m], b[r x n].
void mm_at_acc(const float* a, const float* b, float* c, std::size_t r,
               std::size_t m, std::size_t n) {
  for (std::size_t row = 0; row < r; ++row) {
    const float* ar = a + row * m;
    const float* br = b + row * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float av = ar[i];
      if (av == 0.0f) continue;
      float* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

void col_sum_acc(const Buf& a, float* out, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[j] += a[r * n + j];
  }
}

float activation_grad(float x, Activation kind) {
  switch (kind) {
    case Activation::kGelu: {
      constexpr float c = 0.7978845608028654f;
      const float x2 = x * x;
      const float t = std::tanh(c * (x + 0.044715f * x2 * x));
      return 0.5f * (1.0f + t) +
             0.5f * x * (1.0f - t * t) * c * (1.0f + 3.0f * 0.044715f * x2);
    }
    case Activation::kSilu: {
      const float s = 1.0f / (1.0f + std::exp(-x));
      return s * (1.0f + x * (1.0f - s));
    }
    case Activation::kRelu:
      return x > 0.0f ? 1.0f : 0.0f;
  }
  return 0.0f;
}

struct LayerCache {
  Buf x, n1, inv1, q, k, v, probs, o, h, n2, inv2, u, act;
};

}  // namespace

Model zeros_like(const Model& model) {
  Model z = allocate_model(model.config);
  for (auto& [name, t] : named_tensors(z)) {
    std::fill(t->data().begin(), t->data().end(), 0.0f);
  }
  return z;
}

double loss_and_gradients(const Model& model, const TokenBatch& tokens,
                          Model& grads) {
  const ModelConfig& cfg = model.config;
  const std::size_t B = tokens.batch, T = tokens.seq;
  const std::size_t N = B * T;
  const auto H = static_cast<std::size_t>(cfg.hidden);
  const auto F = static_cast<std::size_t>(cfg.ffn_hidden);
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto NH = static_cast<std::size_t>(cfg.n_heads);
  const auto DK = static_cast<std::size_t>(cfg.head_dim);
  const float scale = 1.0f / std::sqrt(static_cast<float>(DK));
  if (T < 2) throw ConfigError("training sequences need at least 2 tokens");

  for (auto& [name, t] : named_tensors(grads)) {
    std::fill(t->data().begin(), t->data().end(), 0.0f);
  }

  // Forward, caching what the backward pass needs.
  const Tensor x0 = embed(tokens, model);
  Buf x(x0.data().begin(), x0.data().end());
  std::vector<LayerCache> caches(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerWeights& w = model.layers[li];
    LayerCache& c = caches[li];
    c.x = x;
    c.n1.resize(N * H);
    c.inv1.resize(N);
    rms_fwd(x.data(), w.attn_norm_gain.ptr(), c.n1.data(), c.inv1.data(), N, H,
            cfg.norm_eps);
    mm(c.n1, w.wq, c.q, N);
    mm(c.n1, w.wk, c.k, N);
    mm(c.n1, w.wv, c.v, N);
    c.probs.assign(B * NH * T * T, 0.0f);
    c.o.assign(N * H, 0.0f);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t hd = 0; hd < NH; ++hd) {
        float* P = c.probs.data() + (b * NH + hd) * T * T;
        for (std::size_t t = 0; t < T; ++t) {
          const float* qr = c.q.data() + (b * T + t) * H + hd * DK;
          float* prow = P + t * T;
          for (std::size_t s = 0; s <= t; ++s) {
            const float* kr = c.k.data() + (b * T + s) * H + hd * DK;
            float acc = 0.0f;
            for (std::size_t j = 0; j < DK; ++j) acc += qr[j] * kr[j];
            prow[s] = acc * scale;
          }
          softmax_inplace(std::span<float>(prow, t + 1));
          float* orow = c.o.data() + (b * T + t) * H + hd * DK;
          for (std::size_t s = 0; s <= t; ++s) {
            const float* vr = c.v.data() + (b * T + s) * H + hd * DK;
            for (std::size_t j = 0; j < DK; ++j) orow[j] += prow[s] * vr[j];
          }
        }
      }
    }
    Buf att;
    mm(c.o, w.wo, att, N);
    c.h.resize(N * H);
    for (std::size_t i = 0; i < N * H; ++i) c.h[i] = x[i] + att[i];
    c.n2.resize(N * H);
    c.inv2.resize(N);
    rms_fwd(c.h.data(), w.ffn_norm_gain.ptr(), c.n2.data(), c.inv2.data(), N, H,
            cfg.norm_eps);
    mm(c.n2, w.w1, c.u, N);
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t j = 0; j < F; ++j) c.u[r * F + j] += w.b1[j];
    }
    c.act.resize(N * F);
    for (std::size_t i = 0; i < N * F; ++i) c.act[i] = activate(c.u[i], cfg.activation);
    Buf f;
    mm(c.act, w.w2, f, N);
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t j = 0; j < H; ++j) x[r * H + j] = c.h[r * H + j] + f[r * H + j] + w.b2[j];
    }
  }
  Buf nf(N * H), invf(N);
  rms_fwd(x.data(), model.final_norm_gain.ptr(), nf.data(), invf.data(), N, H,
          cfg.norm_eps);
  Buf logits;
  mm(nf, model.output_projection, logits, N);

  // Cross-entropy over positions t < T-1; dlogits = (softmax - onehot) / count.
  const double count = static_cast<double>(B * (T - 1));
  double loss = 0.0;
  Buf dlogits(N * V, 0.0f);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const std::size_t r = b * T + t;
      float* row = logits.data() + r * V;
      const auto target = static_cast<std::size_t>(tokens.at(b, t + 1));
      double mx = row[0];
      for (std::size_t j = 1; j < V; ++j) mx = std::max<double>(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
      loss += mx + std::log(sum) - row[target];
      for (std::size_t j = 0; j < V; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        dlogits[r * V + j] = static_cast<float>((p - (j == target ? 1.0 : 0.0)) / count);
      }
    }
  }
  loss /= count;

  // Backward.
  mm_at_acc(nf.data(), dlogits.data(), grads.output_projection.ptr(), N, H, V);
  Buf dnf;
  mm_bt(dlogits, model.output_projection, dnf, N);
  Buf dx(N * H, 0.0f);
  rms_bwd(x.data(), model.final_norm_gain.ptr(), invf.data(), dnf.data(),
          dx.data(), grads.final_norm_gain.ptr(), N, H);

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerWeights& w = model.layers[li];
    LayerWeights& gw = grads.layers[li];
    const LayerCache& c = caches[li];

    // x_out = h + W2 act + b2
    Buf dh = dx;
    col_sum_acc(dx, gw.b2.ptr(), N, H);
    mm_at_acc(c.act.data(), dx.data(), gw.w2.ptr(), N, F, H);
    Buf du;
    mm_bt(dx, w.w2, du, N);
    for (std::size_t i = 0; i < N * F; ++i) du[i] *= activation_grad(c.u[i], cfg.activation);
    col_sum_acc(du, gw.b1.ptr(), N, F);
    mm_at_acc(c.n2.data(), du.data(), gw.w1.ptr(), N, H, F);
    Buf dn2;
    mm_bt(du, w.w1, dn2, N);
    rms_bwd(c.h.data(), w.ffn_norm_gain.ptr(), c.inv2.data(), dn2.data(),
            dh.data(), gw.ffn_norm_gain.ptr(), N, H);

    // h = x + o Wo
    Buf dxin = dh;
    mm_at_acc(c.o.data(), dh.data(), gw.wo.ptr(), N, H, H);
    Buf dout;
    mm_bt(dh, w.wo, dout, N);

    Buf dq(N * H, 0.0f), dk(N * H, 0.0f), dv(N * H, 0.0f);
    Buf dp(T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t hd = 0; hd < NH; ++hd) {
        const float* P = c.probs.data() + (b * NH + hd) * T * T;
        for (std::size_t t = 0; t < T; ++t) {
          const float* prow = P + t * T;
          const float* dor = dout.data() + (b * T + t) * H + hd * DK;
          float dot = 0.0f;
          for (std::size_t s = 0; s <= t; ++s) {
            const float* vr = c.v.data() + (b * T + s) * H + hd * DK;
            float* dvr = dv.data() + (b * T + s) * H + hd * DK;
            float acc = 0.0f;
            for (std::size_t j = 0; j < DK; ++j) {
              acc += dor[j] * vr[j];
              dvr[j] += prow[s] * dor[j];
            }
            dp[s] = acc;
            dot += prow[s] * acc;
          }
          const float* qr = c.q.data() + (b * T + t) * H + hd * DK;
          float* dqr = dq.data() + (b * T + t) * H + hd * DK;
          for (std::size_t s = 0; s <= t; ++s) {
            const float ds = prow[s] * (dp[s] - dot) * scale;
            const float* kr = c.k.data() + (b * T + s) * H + hd * DK;
            float* dkr = dk.data() + (b * T + s) * H + hd * DK;
            for (std::size_t j = 0; j < DK; ++j) {
              dqr[j] += ds * kr[j];
              dkr[j] += ds * qr[j];
            }
          }
        }
      }
    }
    mm_at_acc(c.n1.data(), dq.data(), gw.wq.ptr(), N, H, H);
    mm_at_acc(c.n1.data(), dk.data(), gw.wk.ptr(), N, H, H);
    mm_at_acc(c.n1.data(), dv.data(), gw.wv.ptr(), N, H, H);
    Buf dn1, tmp;
    mm_bt(dq, w.wq, dn1, N);
    mm_bt(dk, w.wk, tmp, N);
    for (std::size_t i = 0; i < N * H; ++i) dn1[i] += tmp[i];
    mm_bt(dv, w.wv, tmp, N);
    for (std::size_t i = 0; i < N * H; ++i) dn1[i] += tmp[i];
    rms_bwd(c.x.data(), w.attn_norm_gain.ptr(), c.inv1.data(), dn1.data(),
            dxin.data(), gw.attn_norm_gain.ptr(), N, H);
    dx = std::move(dxin);
  }

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto id = static_cast<std::size_t>(tokens.at(b, t));
      const float* g = dx.data() + (b * T + t) * H;
      float* te = grads.token_embedding.ptr() + id * H;
      float* pe = grads.position_embedding.ptr() + t * H;
      for (std::size_t i = 0; i < H; ++i) {
        te[i] += g[i];
        pe[i] += g[i];
      }
    }
  }
  return loss;
}

namespace {

Model init_for_training(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = allocate_model(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  const float resid_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));
  for (auto& [name, t] : named_tensors(m)) {
    if (name.ends_with("norm_gain") || name.ends_with(".b1") ||
        name.ends_with(".b2")) {
      continue;
    }
    const bool residual_out = name.ends_with(".wo") || name.ends_with(".w2");
    for (float& v : t->data()) v = normal(rng) * (residual_out ? resid_scale : 1.0f);
  }
  return m;
}

float learning_rate(const TrainOptions& o, int step) {
  if (step < o.warmup_steps) {
    return o.peak_lr * static_cast<float>(step + 1) / static_cast<float>(o.warmup_steps);
  }
  const float progress = static_cast<float>(step - o.warmup_steps) /
                         static_cast<float>(std::max(1, o.steps - o.warmup_steps));
  constexpr float kPi = 3.14159265358979f;
  return o.peak_lr * (0.1f + 0.9f * 0.5f * (1.0f + std::cos(kPi * progress)));
}

void adam_update(Model& model, const Model& grads, AdamState& state, float lr,
                 float clip) {
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.95f, kEps = 1e-8f;
  auto params = named_tensors(model);
  const auto g = named_tensors(grads);
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t->numel(), 0.0f);
      state.v.emplace_back(t->numel(), 0.0f);
    }
  }
  double norm2 = 0.0;
  for (const auto& [name, t] : g) {
    for (float v : t->data()) norm2 += static_cast<double>(v) * v;
  }
  const float norm = static_cast<float>(std::sqrt(norm2));
  const float gscale = norm > clip ? clip / norm : 1.0f;

  ++state.step;
  const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(state.step));
  const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    float* w = params[p].second->ptr();
    const float* gr = g[p].second->ptr();
    float* m = state.m[p].data();
    float* v = state.v[p].data();
    for (std::size_t i = 0; i < params[p].second->numel(); ++i) {
      const float gi = gr[i] * gscale;
      m[i] = kBeta1 * m[i] + (1.0f - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1.0f - kBeta2) * gi * gi;
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
}

TokenBatch sample_batch(const std::string& text, const TrainOptions& o,
                        std::mt19937_64& rng) {
  TokenBatch t;
  t.batch = o.batch;
  t.seq = o.seq_len;
  t.ids.reserve(o.batch * o.seq_len);
  const std::size_t body = o.seq_len - 1;
  for (std::size_t b = 0; b < o.batch; ++b) {
    const std::size_t start = static_cast<std::size_t>(rng() % (text.size() - body));
    t.ids.push_back(kBosToken);
    for (std::size_t i = 0; i < body; ++i) {
      t.ids.push_back(static_cast<unsigned char>(text[start + i]));
    }
  }
  return t;
}

}  // namespace

DeskFixture generate_fixture(const FixtureOptions& options,
                             const TrainProgress& progress) {
  const TrainOptions& o = options.train;
  ModelConfig cfg = desk_config();
  if (o.seq_len < 2 || o.seq_len > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw ConfigError("training seq_len must be in [2, max_seq_len]");
  }
  const std::string train_text = synthetic_text(o.seed, options.train_bytes);
  if (train_text.size() <= o.seq_len) throw ConfigError("training text too short");

  DeskFixture fx;
  fx.model = init_for_training(cfg, o.seed ^ 0x9e3779b97f4a7c15ULL);
  // Held-out text comes from an independent generator stream.
  const std::size_t body = static_cast<std::size_t>(cfg.max_seq_len) - 1;
  fx.heldout_text = synthetic_text(o.seed + 1, options.heldout_sequences * body);

  Model grads = zeros_like(fx.model);
  AdamState adam;
  std::mt19937_64 rng(o.seed + 2);
  for (int step = 0; step < o.steps; ++step) {
    const TokenBatch batch = sample_batch(train_text, o, rng);
    const double loss = loss_and_gradients(fx.model, batch, grads);
    adam_update(fx.model, grads, adam, learning_rate(o, step), o.grad_clip);
    fx.losses.push_back(static_cast<float>(loss));
    if (progress) progress(step, loss);
  }
  fx.model.validate();
  return fx;
}

void write_fixture(const DeskFixture& fixture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_model(fixture.model, dir / "config.json", dir / "model.cqw");
  write_file(dir / "heldout.txt", fixture.heldout_text);
}

}  // namespace cqil
