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

#ifndef CQIL_FIXTURE_HPP_
#define CQIL_FIXTURE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cqil/model.hpp"

namespace cqil {

// Small byte-level model used by the analysis suite: 12 layers, H = 64,
// 4 heads, FFN 256, vocab 257 (bytes + BOS), context 64.
ModelConfig desk_config();

// Deterministic English-like text from a procedural grammar (pseudo-words,
// subject/verb agreement, paragraph topics, quoted speech). Only uses the
// raw 64-bit engine output, so it does not depend on the standard library's
// distribution implementations.
std::string synthetic_text(std::uint64_t seed, std::size_t n_bytes);

// Mean next-token cross-entropy (natural log) of `tokens` under `model`,
// with gradients for every parameter written into `grads` (same layout as
// the model; overwritten, not accumulated).
double loss_and_gradients(const Model& model, const TokenBatch& tokens,
                          Model& grads);

// Model-shaped tensors, all zero.
Model zeros_like(const Model& model);

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int step = 0;
};

struct TrainOptions {
  std::uint64_t seed = 7;
  int steps = 1200;
  std::size_t batch = 16;
  std::size_t seq_len = 64;
  float peak_lr = 3e-3f;
  int warmup_steps = 100;
  float grad_clip = 1.0f;
};

struct FixtureOptions {
  TrainOptions train;
  std::size_t train_bytes = 400000;
  std::size_t heldout_sequences = 32;
};

struct DeskFixture {
  Model model;
  std::string heldout_text;
  std::vector<float> losses;  // one per training step
};

using TrainProgress = std::function<void(int step, double loss)>;

// Trains a desk_config() model on synthetic_text(seed) and returns it with a
// held-out text drawn from an independent stream. Single-threaded and
// deterministic for fixed options on a given build.
DeskFixture generate_fixture(const FixtureOptions& options,
                             const TrainProgress& progress = {});

// Writes config.json, model.cqw and heldout.txt into `dir`.
void write_fixture(const DeskFixture& fixture, const std::filesystem::path& dir);

// data/desk inside the source tree.
std::filesystem::path default_fixture_dir();

}  // namespace cqil

#endif  // CQIL_FIXTURE_HPP_
