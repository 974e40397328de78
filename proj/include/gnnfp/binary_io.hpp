// Copyright 2026 The gnnfp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian stream helpers shared by every on-disk format.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace gnnfp {

template <typename T>
T decode_le(const char* p) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i));
  }
  return std::bit_cast<T>(u);
}

template <typename T>
void encode_le(T value, char* p) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U u = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    p[i] = static_cast<char>((u >> (8 * i)) & 0xFFu);
  }
}

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error("unexpected end of file");
    }
  }

  template <typename T>
  T scalar() {
    std::array<char, sizeof(T)> buf;
    bytes(buf.data(), buf.size());
    return decode_le<T>(buf.data());
  }

  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }
  double f64() { return scalar<double>(); }

  template <typename T>
  void array(std::span<T> out) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(reinterpret_cast<char*>(out.data()), out.size_bytes());
    } else {
      for (auto& v : out) v = scalar<T>();
    }
  }

  std::string string() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void expect_magic(const char (&magic)[5]) {
    char buf[4];
    bytes(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0) {
      throw std::runtime_error(std::string("bad magic, expected ") + magic);
    }
  }

 private:
  std::istream& in_;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(const char* src, std::size_t n) {
    out_.write(src, static_cast<std::streamsize>(n));
  }

  template <typename T>
  void scalar(T v) {
    std::array<char, sizeof(T)> buf;
    encode_le(v, buf.data());
    bytes(buf.data(), buf.size());
  }

  void u8(std::uint8_t v) { scalar(v); }
  void u16(std::uint16_t v) { scalar(v); }
  void i16(std::int16_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  void f64(double v) { scalar(v); }

  template <typename T>
  void array(std::span<const T> in) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(reinterpret_cast<const char*>(in.data()), in.size_bytes());
    } else {
      for (const auto& v : in) scalar(v);
    }
  }

  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

}  // namespace gnnfp
