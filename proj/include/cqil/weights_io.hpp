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

#ifndef CQIL_WEIGHTS_IO_HPP_
#define CQIL_WEIGHTS_IO_HPP_

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cqil/model.hpp"

namespace cqil {

// .cqw layout (all integers little-endian):
//   bytes 0..3    magic "CQW1"
//   bytes 4..11   manifest length N (u64)
//   next N bytes  manifest: compact JSON object, keys sorted, mapping tensor
//                 name -> {"byte_length", "dtype": "f32", "offset", "shape"}
//   rest          payload; offsets are relative to its first byte, tensors
//                 are stored in canonical schema order without padding
inline constexpr std::string_view kWeightsMagic = "CQW1";

nlohmann::json config_to_json(const ModelConfig& config);
// Throws FormatError for missing/mistyped keys, ConfigError for invalid values.
ModelConfig config_from_json(const nlohmann::json& doc);

ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& config, const std::filesystem::path& path);

std::string serialize_weights(const Model& model);
// Validates the container against the schema of `config` and returns a fully
// validated model. Throws FormatError (bad magic, manifest/payload mismatch,
// missing or unexpected tensor, shape mismatch) or NumericError.
Model deserialize_weights(const ModelConfig& config, std::string_view bytes);

Model load_model(const std::filesystem::path& config_path,
                 const std::filesystem::path& weights_path);
void save_model(const Model& model, const std::filesystem::path& config_path,
                const std::filesystem::path& weights_path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace cqil

#endif  // CQIL_WEIGHTS_IO_HPP_
