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

// Synthetic audio for tests and demos. Tracks are sequences of random
// harmonic notes and band-passed noise bursts over a slowly modulated drone,
// so content changes on a sub-second scale. Noise clips and room responses
// come from separate generators and seeds.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gnnfp/audio.hpp"

namespace gnnfp {

struct SynthTrackConfig {
  double duration_s = 10.0;
  int sample_rate = kCanonicalRate;
  double events_per_s = 6.0;
};

WaveBuffer synth_track(std::uint64_t seed, const SynthTrackConfig& cfg = {});
WaveBuffer synth_noise(std::uint64_t seed, double duration_s, int sample_rate = kCanonicalRate);
WaveBuffer synth_rir(std::uint64_t seed, int sample_rate = kCanonicalRate);

/// Track i of a corpus generated from `seed`.
std::vector<WaveBuffer> synth_tracks(int n, double duration_s, std::uint64_t seed);

enum class NoiseSplit : std::uint64_t { kTrain = 1, kTest = 2 };
std::vector<WaveBuffer> synth_noise_bank(NoiseSplit split, int n, double duration_s, std::uint64_t seed);
std::vector<WaveBuffer> synth_rir_bank(int n, std::uint64_t seed);

/// Pearson correlation over the common prefix.
double correlation(std::span<const float> a, std::span<const float> b);

struct CorpusConfig {
  int n_tracks = 100;
  double duration_s = 10.0;
  std::uint64_t seed = 0;
  int noise_clips = 8;  // per split
  double noise_duration_s = 10.0;
  int rirs = 8;
};

struct CorpusLayout {
  std::filesystem::path tracks_manifest;
  std::filesystem::path noise_train_manifest;
  std::filesystem::path noise_test_manifest;
  std::filesystem::path rir_manifest;
  std::vector<std::filesystem::path> tracks;
};

/// Writes tracks/, noise/train/, noise/test/, rirs/ and one path-per-line
/// manifest for each under `dir`.
CorpusLayout write_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg);

}  // namespace gnnfp
