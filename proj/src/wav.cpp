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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "gnnfp/audio.hpp"
#include "gnnfp/binary_io.hpp"

namespace gnnfp {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

}  // namespace

WaveBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");

  char tag[4];
  BinaryReader r(in);
  r.bytes(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) fail(path, "not a RIFF file");
  r.u32();
  r.bytes(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) fail(path, "not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (in) {
    r.bytes(tag, 4);
    const std::uint32_t chunk = r.u32();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::uint32_t consumed = 16;
      if (format == kFormatExtensible && chunk >= 26) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();
        consumed = 26;
      }
      in.seekg(chunk - consumed + (chunk & 1u), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) fail(path, "data chunk before fmt chunk");
      if (channels == 0) fail(path, "zero channels");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) {
        fail(path, "unsupported encoding (need 16-bit PCM or 32-bit float)");
      }
      const std::size_t bytes_per = bits / 8;
      const std::size_t frames = chunk / (bytes_per * channels);
      std::vector<char> raw(frames * bytes_per * channels);
      r.bytes(raw.data(), raw.size());

      WaveBuffer wave;
      wave.sample_rate = static_cast<int>(rate);
      wave.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const char* p = raw.data() + (f * channels + c) * bytes_per;
          if (pcm16) {
            acc += decode_le<std::int16_t>(p) / 32768.0;
          } else {
            acc += decode_le<float>(p);
          }
        }
        wave.samples[f] = static_cast<float>(acc / channels);
      }
      validate(wave);
      return wave;
    } else {
      in.seekg(chunk + (chunk & 1u), std::ios::cur);
    }
  }
  fail(path, "no data chunk");
}

void write_wav(const std::filesystem::path& path, const WaveBuffer& wave) {
  validate(wave);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  BinaryWriter w(out);
  const auto data_bytes = static_cast<std::uint32_t>(wave.size() * 2);
  w.bytes("RIFF", 4);
  w.u32(36 + data_bytes);
  w.bytes("WAVE", 4);
  w.bytes("fmt ", 4);
  w.u32(16);
  w.u16(kFormatPcm);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data", 4);
  w.u32(data_bytes);
  for (float s : wave.samples) {
    const double clipped = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    w.i16(static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace gnnfp
