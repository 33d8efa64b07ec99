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

#include "cqil/weights_io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <algorithm>

#include "cqil/errors.hpp"

namespace cqil {

namespace {

static_assert(std::endian::native == std::endian::little,
              "the .cqw reader/writer assumes a little-endian host");

constexpr std::size_t kHeaderBytes = 4 + 8;

template <typename T>
T json_get(const nlohmann::json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& config) {
  return nlohmann::json{
      {"n_layers", config.n_layers},
      {"hidden", config.hidden},
      {"n_heads", config.n_heads},
      {"head_dim", config.head_dim},
      {"ffn_hidden", config.ffn_hidden},
      {"vocab_size", config.vocab_size},
      {"max_seq_len", config.max_seq_len},
      {"norm_eps", config.norm_eps},
      {"activation", std::string(activation_name(config.activation))},
      {"positional", config.positional},
  };
}

ModelConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("model config must be a JSON object");
  ModelConfig c;
  c.n_layers = json_get<int>(doc, "n_layers");
  c.hidden = json_get<int>(doc, "hidden");
  c.n_heads = json_get<int>(doc, "n_heads");
  c.head_dim = json_get<int>(doc, "head_dim");
  c.ffn_hidden = json_get<int>(doc, "ffn_hidden");
  c.vocab_size = json_get<int>(doc, "vocab_size");
  c.max_seq_len = json_get<int>(doc, "max_seq_len");
  c.norm_eps = json_get<float>(doc, "norm_eps");
  c.activation = parse_activation(json_get<std::string>(doc, "activation"));
  c.positional = json_get<std::string>(doc, "positional");
  c.validate();
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const ModelConfig& config, const std::filesystem::path& path) {
  write_file(path, config_to_json(config).dump(2) + "\n");
}

std::string serialize_weights(const Model& model) {
  model.validate();
  const auto tensors = named_tensors(model);
  nlohmann::json manifest = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t->numel() * sizeof(float);
    manifest[name] = {{"dtype", "f32"},
                      {"shape", t->shape()},
                      {"offset", offset},
                      {"byte_length", bytes}};
    offset += bytes;
  }
  const std::string text = manifest.dump();
  const std::uint64_t manifest_len = text.size();

  std::string out;
  out.reserve(kHeaderBytes + text.size() + offset);
  out.append(kWeightsMagic);
  char len_bytes[8];
  std::memcpy(len_bytes, &manifest_len, 8);
  out.append(len_bytes, 8);
  out.append(text);
  for (const auto& [name, t] : tensors) {
    out.append(reinterpret_cast<const char*>(t->ptr()),
               t->numel() * sizeof(float));
  }
  return out;
}

Model deserialize_weights(const ModelConfig& config, std::string_view bytes) {
  if (bytes.size() < kHeaderBytes || bytes.substr(0, 4) != kWeightsMagic) {
    throw FormatError("bad magic: not a CQW1 weight container");
  }
  std::uint64_t manifest_len = 0;
  std::memcpy(&manifest_len, bytes.data() + 4, 8);
  if (manifest_len > bytes.size() - kHeaderBytes) {
    throw FormatError("manifest/payload mismatch: manifest length " +
                      std::to_string(manifest_len) + " exceeds file size");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kHeaderBytes, manifest_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object()) throw FormatError("manifest must be a JSON object");
  const std::string_view payload = bytes.substr(kHeaderBytes + manifest_len);

  struct Entry {
    Shape shape;
    std::uint64_t offset;
    std::uint64_t length;
  };
  std::map<std::string, Entry> entries;
  std::uint64_t total = 0;
  for (const auto& [name, e] : manifest.items()) {
    Entry entry;
    try {
      if (e.at("dtype").get<std::string>() != "f32") {
        throw FormatError("tensor '" + name + "' has unsupported dtype " +
                          e.at("dtype").dump());
      }
      entry.shape = e.at("shape").get<Shape>();
      entry.offset = e.at("offset").get<std::uint64_t>();
      entry.length = e.at("byte_length").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("manifest entry '" + name + "': " + ex.what());
    }
    if (entry.length != shape_numel(entry.shape) * sizeof(float)) {
      throw FormatError("manifest/payload mismatch: tensor '" + name +
                        "' byte_length does not match its shape");
    }
    if (entry.offset > payload.size() ||
        entry.length > payload.size() - entry.offset) {
      throw FormatError("manifest/payload mismatch: tensor '" + name +
                        "' extends past the end of the payload");
    }
    total += entry.length;
    entries.emplace(name, std::move(entry));
  }
  if (total != payload.size()) {
    throw FormatError("manifest/payload mismatch: manifest covers " +
                      std::to_string(total) + " bytes, payload has " +
                      std::to_string(payload.size()));
  }
  // Equal total plus pairwise disjointness means the entries tile the payload.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [name, e] : entries) spans.emplace_back(e.offset, e.length);
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i - 1].first + spans[i - 1].second > spans[i].first) {
      throw FormatError("manifest/payload mismatch: overlapping tensors");
    }
  }

  Model model = allocate_model(config);
  const auto schema = named_tensors(model);
  for (const auto& [name, t] : schema) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw FormatError("missing tensor '" + name + "'");
    }
    if (it->second.shape != t->shape()) {
      throw FormatError("shape mismatch for tensor '" + name + "': file has " +
                        shape_str(it->second.shape) + ", config needs " +
                        shape_str(t->shape()));
    }
    std::memcpy(t->ptr(), payload.data() + it->second.offset,
                it->second.length);
    entries.erase(it);
  }
  if (!entries.empty()) {
    throw FormatError("unexpected tensor '" + entries.begin()->first + "'");
  }
  model.validate();
  return model;
}

Model load_model(const std::filesystem::path& config_path,
                 const std::filesystem::path& weights_path) {
  const ModelConfig config = load_config(config_path);
  return deserialize_weights(config, read_file(weights_path));
}

void save_model(const Model& model, const std::filesystem::path& config_path,
                const std::filesystem::path& weights_path) {
  const std::string bytes = serialize_weights(model);
  save_config(model.config, config_path);
  write_file(weights_path, bytes);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError("read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

}  // namespace cqil
