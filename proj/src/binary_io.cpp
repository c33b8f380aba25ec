// SPDX-License-Identifier: Apache-2.0
#include "knnkd/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "knnkd/errors.hpp"

namespace knnkd {

void ByteWriter::put_le(std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

std::string_view ByteReader::get_bytes(std::size_t n) {
  if (remaining() < n) throw FormatError("unexpected end of data");
  const auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint64_t ByteReader::get_le(int width) {
  const auto bytes = get_bytes(static_cast<std::size_t>(width));
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw FormatError("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t digest) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << digest;
  return ss.str();
}

}  // namespace knnkd
