// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "spring/tensor_file.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "spring/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payloads are written in host order");

namespace spring {

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI64: return "i64";
    case DType::kU8: return "u8";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

namespace {

DType parse_dtype(const std::string& s, std::string_view what) {
  for (DType d : {DType::kF32, DType::kF64, DType::kI64, DType::kU8}) {
    if (dtype_name(d) == s) return d;
  }
  throw data_error(std::string(what) + ": unknown dtype '" + s + "'");
}

}  // namespace

std::int64_t TensorRecord::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

const TensorRecord& Container::get(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw data_error("missing tensor '" + std::string(name) + "'");
}

bool Container::has(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<std::byte> encode_container(std::string_view magic, const Container& c) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["meta"] = c.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype) != t.bytes.size()) {
      throw config_error("tensor '" + t.name + "' payload does not match its shape");
    }
    manifest["tensors"].push_back({{"name", t.name},
                                   {"dtype", dtype_name(t.dtype)},
                                   {"shape", t.shape},
                                   {"offset", offset},
                                   {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string text = manifest.dump();

  std::vector<std::byte> out;
  out.reserve(magic.size() + 8 + text.size() + offset);
  for (char ch : magic) out.push_back(static_cast<std::byte>(ch));
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xff));
  for (char ch : text) out.push_back(static_cast<std::byte>(ch));
  for (const auto& t : c.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

Container decode_container(std::span<const std::byte> data, std::string_view magic,
                           std::string_view what) {
  const auto fail = [&](const std::string& detail) {
    return data_error(std::string(what) + " (" + detail + ")");
  };
  if (data.size() < magic.size() + 8) throw fail("file too short");
  for (std::size_t i = 0; i < magic.size(); ++i) {
    if (static_cast<char>(data[i]) != magic[i]) throw fail("bad magic");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<std::uint64_t>(data[magic.size() + i]) << (8 * i);
  }
  const std::size_t header = magic.size() + 8;
  if (len > data.size() - header) throw fail("truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(
        reinterpret_cast<const char*>(data.data() + header),
        reinterpret_cast<const char*>(data.data() + header + len));
  } catch (const nlohmann::json::exception&) {
    throw fail("malformed manifest");
  }

  Container c;
  const std::size_t payload = header + len;
  std::uint64_t expected = 0;
  try {
    if (manifest.at("format_version").get<int>() != 1) throw fail("unsupported version");
    c.meta = manifest.at("meta");
    for (const auto& entry : manifest.at("tensors")) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.dtype = parse_dtype(entry.at("dtype").get<std::string>(), what);
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (offset != expected) throw fail("payloads out of manifest order");
      if (static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype) != nbytes) {
        throw fail("shape and byte count disagree for '" + t.name + "'");
      }
      if (nbytes > data.size() - payload - offset) throw fail("truncated payload");
      const auto* begin = data.data() + payload + offset;
      t.bytes.assign(begin, begin + nbytes);
      expected += nbytes;
      c.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception&) {
    throw fail("malformed manifest");
  }
  if (payload + expected != data.size()) throw fail("trailing bytes");
  return c;
}

std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  if (!raw.empty()) std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_bytes(const std::string& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("short write to " + path);
}

void write_container(const std::string& path, std::string_view magic, const Container& c) {
  write_file_bytes(path, encode_container(magic, c));
}

Container read_container(const std::string& path, std::string_view magic,
                         std::string_view what) {
  return decode_container(read_file_bytes(path), magic, what);
}

}  // namespace spring
