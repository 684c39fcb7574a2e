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

#include "gcmp/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gcmp/error.hpp"

namespace gcmp {

static_assert(std::endian::native == std::endian::little,
              "container payloads are written in host order and assume little-endian");

namespace {

constexpr char kMagic[4] = {'G', 'C', 'M', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, const std::vector<T>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(T));
}

const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "i8"; }

}  // namespace

TensorRecord TensorRecord::from_tensor(std::string name, const Tensor& t) {
  TensorRecord r;
  r.name = std::move(name);
  r.dtype = DType::F32;
  r.shape = t.shape();
  r.f32 = t.storage();
  return r;
}

Tensor TensorRecord::to_tensor() const {
  if (dtype != DType::F32) throw ValidationError("tensor '" + name + "' is not f32");
  return Tensor(shape, f32);
}

const TensorRecord& Container::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ValidationError("container has no tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json manifest = c.header;
  nlohmann::json descs = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& t : c.tensors) {
    nlohmann::json d{{"name", t.name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape},
                     {"offset", payload.size()}};
    if (t.dtype == DType::F32) {
      if (static_cast<std::int64_t>(t.f32.size()) != numel_of(t.shape)) {
        throw ShapeError("tensor '" + t.name + "' payload does not match its shape");
      }
      append_raw(payload, t.f32);
      d["nbytes"] = t.f32.size() * sizeof(float);
    } else {
      if (static_cast<std::int64_t>(t.i8.size()) != numel_of(t.shape)) {
        throw ShapeError("tensor '" + t.name + "' payload does not match its shape");
      }
      append_raw(payload, t.i8);
      d["nbytes"] = t.i8.size();
      // Keep the f32 scales 4-byte aligned within the payload.
      while (payload.size() % alignof(float) != 0) payload.push_back(0);
      d["scales_offset"] = payload.size();
      d["scales_count"] = t.scales.size();
      append_raw(payload, t.scales);
    }
    descs.push_back(std::move(d));
  }
  manifest["tensors"] = std::move(descs);
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kContainerVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError("not a GCMP container (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version != kContainerVersion) {
    throw ValidationError("unsupported container version " + std::to_string(version));
  }
  const std::uint64_t mlen = get_le(bytes.data() + 8, 8);
  if (16 + mlen > bytes.size()) throw ValidationError("truncated container manifest");
  const std::size_t payload_start = 16 + static_cast<std::size_t>(mlen);
  Container c;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("corrupt container manifest: ") + e.what());
  }
  auto in_range = [&](std::uint64_t off, std::uint64_t len) {
    if (payload_start + off + len > bytes.size()) throw ValidationError("truncated container payload");
    return bytes.data() + payload_start + off;
  };
  try {
    for (const auto& d : manifest.at("tensors")) {
      TensorRecord t;
      t.name = d.at("name").get<std::string>();
      t.shape = d.at("shape").get<Shape>();
      const auto n = static_cast<std::size_t>(numel_of(t.shape));
      const std::string dt = d.at("dtype").get<std::string>();
      const auto off = d.at("offset").get<std::uint64_t>();
      if (dt == "f32") {
        t.dtype = DType::F32;
        t.f32.resize(n);
        std::memcpy(t.f32.data(), in_range(off, n * sizeof(float)), n * sizeof(float));
      } else if (dt == "i8") {
        t.dtype = DType::I8;
        t.i8.resize(n);
        std::memcpy(t.i8.data(), in_range(off, n), n);
        const auto sc = d.at("scales_count").get<std::size_t>();
        t.scales.resize(sc);
        std::memcpy(t.scales.data(), in_range(d.at("scales_offset").get<std::uint64_t>(), sc * sizeof(float)),
                    sc * sizeof(float));
      } else {
        throw ValidationError("unknown tensor dtype '" + dt + "'");
      }
      c.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed tensor descriptor: ") + e.what());
  }
  manifest.erase("tensors");
  c.header = std::move(manifest);
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace gcmp
