// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace spring {

enum class DType { kF32, kF64, kI64, kU8 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

/// One named tensor inside a container. Payload bytes are little-endian.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> bytes;

  std::int64_t numel() const;

  template <typename T>
  static TensorRecord from(std::string name, DType dtype,
                           std::vector<std::int64_t> shape,
                           std::span<const T> values) {
    TensorRecord r{std::move(name), dtype, std::move(shape), {}};
    r.bytes.resize(values.size_bytes());
    if (!values.empty()) std::memcpy(r.bytes.data(), values.data(), values.size_bytes());
    return r;
  }

  template <typename T>
  std::vector<T> as() const {
    std::vector<T> out(bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
    return out;
  }
};

/// Versioned tensor container:
///   8-byte magic | u64 manifest length | JSON manifest | payloads
/// The manifest lists tensors in payload order with dtype, shape, byte offset
/// (relative to the first payload byte) and byte count, plus free-form meta.
struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord& get(std::string_view name) const;
  bool has(std::string_view name) const;
};

inline constexpr std::string_view kCheckpointMagic = "SPRCKPT1";
inline constexpr std::string_view kIndexMagic = "SPRIDX01";

std::vector<std::byte> encode_container(std::string_view magic, const Container& c);
/// Throws a data error mentioning `what` ("unrecognized checkpoint", ...) on
/// a magic mismatch, truncation, or malformed manifest.
Container decode_container(std::span<const std::byte> data, std::string_view magic,
                           std::string_view what);

void write_container(const std::string& path, std::string_view magic, const Container& c);
Container read_container(const std::string& path, std::string_view magic,
                         std::string_view what);

std::vector<std::byte> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::byte> bytes);

}  // namespace spring
