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

#include <complex>
#include <memory>
#include <vector>

#include "gnnfp/audio.hpp"

namespace gnnfp {

/// STFT and mel filterbank settings. The defaults give a 64 x 32 log-power
/// mel spectrogram for a 1 s segment at 16 kHz.
struct MelConfig {
  int sample_rate = kCanonicalRate;
  int n_fft = 1024;
  int hop_length = 500;
  int n_mels = 64;
  double f_min = 0.0;
  double f_max = 8000.0;
  int segment_samples = 16000;
  double log_floor = 1e-8;

  int n_frames() const { return segment_samples / hop_length; }
  void validate() const;
  bool operator==(const MelConfig&) const = default;
};

/// F x T log-mel matrix, stored frequency-major.
struct MelSpec {
  int n_freq = 0;
  int n_time = 0;
  std::vector<float> values;

  float& at(int f, int t) { return values[static_cast<std::size_t>(f) * n_time + t]; }
  float at(int f, int t) const { return values[static_cast<std::size_t>(f) * n_time + t]; }
};

/// 3 x F x T encoder input: channel 0 holds mel amplitudes, channel 1 the
/// normalised time index, channel 2 the normalised frequency index.
struct PositionalFeature {
  int n_freq = 0;
  int n_time = 0;
  std::vector<float> tensor;

  static constexpr int kChannels = 3;

  float& at(int c, int f, int t) {
    return tensor[(static_cast<std::size_t>(c) * n_freq + f) * n_time + t];
  }
  float at(int c, int f, int t) const {
    return tensor[(static_cast<std::size_t>(c) * n_freq + f) * n_time + t];
  }
};

// Slaney mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular, area-normalised filters; row m holds the weights of filter m
/// over the n_fft / 2 + 1 FFT bins.
std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg);

/// Reusable extractor owning the FFT plan, window and filterbank. Not
/// thread-safe; use one per worker.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const MelConfig& cfg = {});
  ~LogMelExtractor();
  LogMelExtractor(LogMelExtractor&&) noexcept;
  LogMelExtractor& operator=(LogMelExtractor&&) noexcept;

  MelSpec compute(const WaveBuffer& segment);
  const MelConfig& config() const { return cfg_; }

 private:
  struct Impl;
  MelConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

/// Thread-safe convenience wrapper (one cached extractor per thread).
MelSpec log_mel(const WaveBuffer& segment, const MelConfig& cfg = {});

PositionalFeature add_positional_channels(const MelSpec& spec);

/// Zero-mean, unit-variance normalisation of channel 0 in place. Index
/// channels are untouched.
void standardize_amplitude(PositionalFeature& feature);

/// segment -> log_mel -> positional channels -> standardisation.
PositionalFeature extract_features(const WaveBuffer& segment,
                                   const MelConfig& cfg = {});

}  // namespace gnnfp
