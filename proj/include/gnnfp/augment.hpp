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

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gnnfp/audio.hpp"

namespace gnnfp {

using Rng = std::mt19937_64;

struct AugmentConfig {
  double offset_ms_max = 50.0;
  double snr_db_low = 0.0;
  double snr_db_high = 20.0;
  /// Probability of convolutional reverb on the augmented view.
  double reverb_prob = 0.5;
  bool noise_enabled = true;
  /// Whether the anchor view also receives a random time offset.
  bool anchor_offset = true;

  void validate() const;

  /// No offset, no reverb, no noise.
  static AugmentConfig disabled();
};

/// Identified clips at the canonical rate, read-only after loading.
struct AudioBank {
  std::vector<std::string> ids;
  std::vector<WaveBuffer> clips;

  bool empty() const { return clips.empty(); }
  std::size_t size() const { return clips.size(); }
  void add(std::string id, WaveBuffer clip);

  /// Newline-delimited UTF-8 paths; relative paths resolve against the
  /// manifest's directory.
  static AudioBank from_manifest(const std::filesystem::path& manifest);
  /// Every *.wav in the directory, sorted by name.
  static AudioBank from_directory(const std::filesystem::path& dir);
};

/// Window of `length` samples starting at `start + offset_ms` within `source`.
/// Throws std::out_of_range if the shifted window leaves the source.
WaveBuffer time_offset(const WaveBuffer& source, std::size_t start,
                       std::size_t length, double offset_ms);

/// Signed sample shift for an offset in milliseconds.
std::ptrdiff_t offset_samples(double offset_ms, int sample_rate);

double draw_offset_ms(const AugmentConfig& cfg, Rng& rng);

struct NoiseMix {
  WaveBuffer mixed;
  /// The gain-scaled noise crop that was added.
  WaveBuffer noise;
};

/// Adds `noise_crop` (same length as `wave`) scaled so that
/// 10 log10(P_wave / P_noise) = snr_db.
NoiseMix mix_noise_crop(const WaveBuffer& wave, const WaveBuffer& noise_crop,
                        double snr_db);

/// Random crop of `noise`, then mix_noise_crop. Silent crops are redrawn.
NoiseMix mix_noise(const WaveBuffer& wave, const WaveBuffer& noise,
                   double snr_db, Rng& rng);

/// Full convolution with `rir` truncated to the input length. With
/// `normalize`, the result is rescaled to the input's peak amplitude.
WaveBuffer conv_reverb(const WaveBuffer& wave, const WaveBuffer& rir,
                       bool normalize = true);

/// Offset -> reverb (with probability reverb_prob) -> noise at a uniform SNR.
/// Pure function of its arguments and the generator state.
WaveBuffer augment_view(const WaveBuffer& source, std::size_t start,
                        std::size_t length, const AugmentConfig& cfg,
                        const AudioBank* noise, const AudioBank* rirs,
                        Rng& rng);

/// Convenience overload where `wave` is both source and window (no material
/// for shifting, so the offset is forced to zero).
WaveBuffer augment_view(const WaveBuffer& wave, const AugmentConfig& cfg,
                        const AudioBank* noise, const AudioBank* rirs,
                        Rng& rng);

}  // namespace gnnfp
