// Copyright 2026 The gcmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/tensor.hpp"

namespace gcmp {

// "GCMP" binary envelope shared by checkpoints and graphs:
//   magic "GCMP" | u32 LE version | u64 LE manifest length | UTF-8 JSON manifest
//   | raw little-endian payloads in manifest order.
// The manifest carries the caller's header fields plus a "tensors" array of
// {name, dtype, shape, offset, nbytes} with offsets relative to the payload
// start. int8 tensors ("i8") also carry {scales_offset, scales_count}: one f32
// scale per row.
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType { F32, I8 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::int8_t> i8;
  std::vector<float> scales;  // per-row, I8 only

  static TensorRecord from_tensor(std::string name, const Tensor& t);
  Tensor to_tensor() const;  // F32 only
};

struct Container {
  nlohmann::json header;  // everything in the manifest except "tensors"
  std::vector<TensorRecord> tensors;

  const TensorRecord& find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<std::uint8_t>& bytes);
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace gcmp
