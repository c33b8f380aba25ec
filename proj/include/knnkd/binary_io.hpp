// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace knnkd {

/// Appends little-endian fields to an in-memory buffer.
class ByteWriter {
 public:
  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
  void put_u16(std::uint16_t v) { put_le(v, 2); }
  void put_u32(std::uint32_t v) { put_le(v, 4); }
  void put_u64(std::uint64_t v) { put_le(v, 8); }
  void put_f32(float v);

  const std::string& bytes() const noexcept { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  void put_le(std::uint64_t v, int width);
  std::string buffer_;
};

/// Reads little-endian fields; throws FormatError when the buffer runs out.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view get_bytes(std::size_t n);
  std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t get_u64() { return get_le(8); }
  float get_f32();

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  std::uint64_t get_le(int width);
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Throws FormatError if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// 64-bit FNV-1a digest.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex_digest(std::uint64_t digest);

}  // namespace knnkd
