// SPDX-License-Identifier: Apache-2.0
//
// Little-endian stream helpers for the binary artifact formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tinyllm::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
inline void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

inline void write_u8(std::ostream& out, std::uint8_t v) { write_pod(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_pod(out, v); }
inline void write_f32(std::ostream& out, float v) { write_pod(out, v); }
inline std::uint8_t read_u8(std::istream& in) { return read_pod<std::uint8_t>(in); }
inline std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return read_pod<float>(in); }

inline void write_u16_array(std::ostream& out, std::span<const std::uint16_t> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}
inline void read_u16_array(std::istream& in, std::span<std::uint16_t> v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}
inline void write_f32_array(std::ostream& out, std::span<const float> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}
inline void read_f32_array(std::istream& in, std::span<float> v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& in, std::size_t max_len = 1 << 16) {
  const auto n = read_u32(in);
  if (!in || n > max_len) {
    in.setstate(std::ios::failbit);
    return {};
  }
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace tinyllm::io
