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

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace gnnfp {

inline constexpr int kCanonicalRate = 16000;

/// Mono PCM signal. Samples are nominally in [-1, 1].
struct WaveBuffer {
  std::vector<float> samples;
  int sample_rate = kCanonicalRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Throws std::invalid_argument if the rate is non-positive or any sample is
/// NaN/Inf.
void validate(const WaveBuffer& wave);

/// Fingerprint segmentation: window length and hop, in seconds.
struct SegmentSpec {
  double window_s = 1.0;
  double hop_s = 0.1;

  void validate() const;
  std::size_t window_samples(int rate) const;
  std::size_t hop_samples(int rate) const;
};

/// Band-limited (windowed-sinc) sample rate conversion.
WaveBuffer resample(const WaveBuffer& wave, int target_rate);

/// Number of full windows that fit in `num_samples`.
std::size_t segment_count(std::size_t num_samples, const SegmentSpec& spec,
                          int rate);

/// Overlapping windows; segment i starts at i * hop. The trailing remainder
/// shorter than one window is dropped.
std::vector<WaveBuffer> segment(const WaveBuffer& wave,
                                const SegmentSpec& spec);

/// Copy of samples [start, start + length).
WaveBuffer slice(const WaveBuffer& wave, std::size_t start,
                 std::size_t length);

// WAV I/O. Reads 16-bit PCM and 32-bit float, any channel count (averaged to
// mono), any rate.
WaveBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WaveBuffer& wave);

/// read_wav followed by resampling to the canonical 16 kHz rate.
WaveBuffer load_audio(const std::filesystem::path& path);

/// Mean squared amplitude.
double mean_power(std::span<const float> samples);

}  // namespace gnnfp
