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

#include <cstring>
#include <limits>
#include <filesystem>

#include "cqil/analysis.hpp"
#include "cqil/errors.hpp"
#include "cqil/fixture.hpp"
#include "cqil/weights_io.hpp"
#include "oracles.hpp"

using namespace cqil;
namespace fs = std::filesystem;

namespace {

// SHA-256 of the bundled data/desk/model.cqw.
constexpr const char* kDeskWeightsSha256 = "9daf29eef9218908b1c52b1ea2ae01f27a13859eebcf89d1cba8966a28dbcac8";

struct Split {
  nlohmann::json manifest;
  std::string payload;
};

Split split(const std::string& bytes) {
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 4, 8);
  return {nlohmann::json::parse(bytes.substr(12, n)), bytes.substr(12 + n)};
}

std::string join(const nlohmann::json& manifest, const std::string& payload) {
  const std::string text = manifest.dump();
  const std::uint64_t n = text.size();
  std::string out = "CQW1";
  out.append(reinterpret_cast<const char*>(&n), 8);
  return out + text + payload;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cqil_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config json round trip") {
  ModelConfig c = oracle::small_config(3);
  c.activation = Activation::kSilu;
  c.norm_eps = 1e-6f;
  const nlohmann::json j = config_to_json(c);
  for (const char* key : {"n_layers", "hidden", "n_heads", "head_dim", "ffn_hidden", "vocab_size",
                          "max_seq_len", "norm_eps", "activation", "positional"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["activation"] == "silu");
  CHECK(j["positional"] == "learned-absolute");
  CHECK(config_from_json(j) == c);
  nlohmann::json missing = j;
  missing.erase("hidden");
  CHECK_THROWS_AS(config_from_json(missing), FormatError);
  nlohmann::json wrong = j;
  wrong["hidden"] = "sixteen";
  CHECK_THROWS_AS(config_from_json(wrong), FormatError);
  nlohmann::json invalid = j;
  invalid["head_dim"] = 5;
  CHECK_THROWS_AS(config_from_json(invalid), ConfigError);
}

TEST_CASE("container layout") {
  const Model m = make_random_model(oracle::small_config(2), 1);
  const std::string bytes = serialize_weights(m);
  CHECK(bytes.substr(0, 4) == "CQW1");
  const Split s = split(bytes);
  const std::string text = s.manifest.dump();
  CHECK(bytes.substr(12, text.size()) == text);  // compact, sorted keys
  std::uint64_t expected_offset = 0;
  std::size_t total = 0;
  for (const auto& [name, shape] : tensor_schema(m.config)) {
    const auto& e = s.manifest.at(name);
    CHECK(e["dtype"] == "f32");
    CHECK(e["shape"].get<Shape>() == shape);
    CHECK(e["offset"].get<std::uint64_t>() == expected_offset);
    CHECK(e["byte_length"].get<std::uint64_t>() == shape_numel(shape) * 4);
    expected_offset += shape_numel(shape) * 4;
    total += shape_numel(shape) * 4;
  }
  CHECK(s.payload.size() == total);
  float first = 0.0f;
  std::memcpy(&first, s.payload.data(), 4);
  CHECK(first == m.token_embedding[0]);
}

TEST_CASE("round trip is bit exact and canonical") {
  const Model m = make_random_model(oracle::small_config(3), 2);
  const fs::path dir = temp_dir("roundtrip");
  save_model(m, dir / "config.json", dir / "model.cqw");
  const Model back = load_model(dir / "config.json", dir / "model.cqw");
  CHECK(back.config == m.config);
  const auto a = named_tensors(m);
  const auto b = named_tensors(back);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(*a[i].second, *b[i].second));
  save_model(back, dir / "config2.json", dir / "model2.cqw");
  CHECK(read_file(dir / "model.cqw") == read_file(dir / "model2.cqw"));
  CHECK(sha256_file(dir / "model.cqw") == sha256_file(dir / "model2.cqw"));
  fs::remove_all(dir);
}

TEST_CASE("corrupt containers are rejected") {
  const ModelConfig c = oracle::small_config(2);
  const Model m = make_random_model(c, 3);
  const std::string good = serialize_weights(m);
  auto error_of = [&](const std::string& bytes) -> std::string {
    try {
      deserialize_weights(c, bytes);
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  };
  auto contains = [](const std::string& s, const char* part) {
    return s.find(part) != std::string::npos;
  };

  CHECK(contains(error_of("CQW2" + good.substr(4)), "bad magic"));
  CHECK(contains(error_of("CQ"), "bad magic"));
  CHECK(contains(error_of(good.substr(0, good.size() - 1)), "manifest/payload mismatch"));
  CHECK(contains(error_of(good.substr(0, 20)), "manifest/payload mismatch"));
  CHECK(contains(error_of(good + "x"), "manifest/payload mismatch"));

  Split s = split(good);
  nlohmann::json renamed = s.manifest;
  renamed["layers.1.w_one"] = renamed["layers.1.w1"];
  renamed.erase("layers.1.w1");
  CHECK(error_of(join(renamed, s.payload)) == "missing tensor 'layers.1.w1'");

  nlohmann::json reshaped = s.manifest;
  reshaped["layers.0.wq"]["shape"] = {8, 32};
  CHECK(contains(error_of(join(reshaped, s.payload)), "shape mismatch for tensor 'layers.0.wq'"));

  nlohmann::json overlap = s.manifest;
  overlap["layers.0.wk"]["offset"] = overlap["layers.0.wq"]["offset"];
  CHECK(contains(error_of(join(overlap, s.payload)), "manifest/payload mismatch"));

  nlohmann::json out_of_bounds = s.manifest;
  out_of_bounds["output_projection"]["offset"] = s.payload.size();
  CHECK(contains(error_of(join(out_of_bounds, s.payload)), "manifest/payload mismatch"));

  nlohmann::json dtype = s.manifest;
  dtype["final_norm_gain"]["dtype"] = "f16";
  CHECK(contains(error_of(join(dtype, s.payload)), "final_norm_gain"));

  nlohmann::json extra = s.manifest;
  extra["layers.7.wq"] = {{"dtype", "f32"}, {"shape", {1}}, {"offset", s.payload.size()}, {"byte_length", 4}};
  CHECK(contains(error_of(join(extra, s.payload + std::string(4, '\0'))), "unexpected tensor"));

  CHECK_THROWS_AS(deserialize_weights(c, good.substr(0, 12) + std::string(good.size() - 12, '{')),
                  FormatError);

  std::string nan_bytes = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_bytes.data() + nan_bytes.size() - 4, &nan, 4);
  CHECK_THROWS_AS(deserialize_weights(c, nan_bytes), NumericError);

  ModelConfig other = c;
  other.ffn_hidden = 48;
  CHECK_THROWS_AS(deserialize_weights(other, good), FormatError);
}

TEST_CASE("missing files are data errors") {
  CHECK_THROWS_AS(load_model("/nonexistent/config.json", "/nonexistent/model.cqw"), FormatError);
  CHECK_THROWS_AS(read_file("/nonexistent/file"), FormatError);
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("bundled desk fixture") {
  const fs::path dir = default_fixture_dir();
  REQUIRE(fs::exists(dir / "model.cqw"));
  CHECK(sha256_file(dir / "model.cqw") == kDeskWeightsSha256);
  const Model m = load_model(dir / "config.json", dir / "model.cqw");
  CHECK(m.config == desk_config());
  CHECK(m.config.n_layers >= 12);
  CHECK(m.config.hidden >= 64);
  CHECK(serialize_weights(m) == read_file(dir / "model.cqw"));
  const EvalCorpus corpus = load_corpus(dir / "heldout.txt", m.config.max_seq_len);
  CHECK(corpus.sequences.size() >= 16);
  CHECK(perplexity(m, corpus) < m.config.vocab_size);
}
