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

#include "gnnfp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "gnnfp/parallel.hpp"

namespace gnnfp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Sub-seed domains.
constexpr std::uint64_t kTrackDomain = 0x747261636bull;
constexpr std::uint64_t kNoiseDomain = 0x6e6f697365ull;
constexpr std::uint64_t kRirDomain = 0x726972ull;

// RBJ band-pass biquad (constant 0 dB peak gain).
class BandPass {
 public:
  BandPass(double centre_hz, double q, int rate) {
    const double w0 = kTwoPi * centre_hz / rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0_ = alpha / a0;
    b2_ = -alpha / a0;
    a1_ = -2.0 * std::cos(w0) / a0;
    a2_ = (1.0 - alpha) / a0;
  }

  double operator()(double x) {
    const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b0_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : x) v *= peak / m;
  }
}

WaveBuffer to_wave(const std::vector<double>& x, int rate) {
  WaveBuffer w;
  w.sample_rate = rate;
  w.samples.assign(x.begin(), x.end());
  return w;
}

void add_note(std::vector<double>& out, std::size_t onset, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f0 = 100.0 * std::pow(20.0, u(rng));  // 100 Hz .. 2 kHz, log-uniform
  const double glide = 1.0 + 0.3 * (u(rng) - 0.5);
  const int harmonics = 1 + static_cast<int>(u(rng) * 5.0);
  const double rolloff = 0.5 + 1.5 * u(rng);
  const double dur_s = 0.08 + 0.42 * u(rng);
  const double attack_s = 0.005 + 0.015 * u(rng);
  const double amp = 0.2 + 0.8 * u(rng);
  std::vector<double> phase(static_cast<std::size_t>(harmonics));
  for (auto& p : phase) p = kTwoPi * u(rng);

  const auto len = static_cast<std::size_t>(dur_s * rate);
  const double nyquist = 0.5 * rate;
  double base_phase = 0.0;
  for (std::size_t n = 0; n < len && onset + n < out.size(); ++n) {
    const double t = static_cast<double>(n) / rate;
    const double f = f0 * (1.0 + (glide - 1.0) * t / dur_s);
    base_phase += kTwoPi * f / rate;
    const double env = std::min(1.0, t / attack_s) * std::exp(-4.0 * t / dur_s);
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      if (f * h >= nyquist) break;
      s += std::sin(h * base_phase + phase[h - 1]) / std::pow(h, rolloff);
    }
    out[onset + n] += amp * env * s;
  }
}

void add_burst(std::vector<double>& out, std::size_t onset, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  BandPass bp(300.0 * std::pow(20.0, u(rng)), 1.0 + 4.0 * u(rng), rate);
  const double dur_s = 0.03 + 0.17 * u(rng);
  const double amp = 0.5 + 1.5 * u(rng);
  const auto len = static_cast<std::size_t>(dur_s * rate);
  for (std::size_t n = 0; n < len && onset + n < out.size(); ++n) {
    const double t = static_cast<double>(n) / rate;
    out[onset + n] += amp * std::exp(-5.0 * t / dur_s) * bp(g(rng));
  }
}

}  // namespace

WaveBuffer synth_track(std::uint64_t seed, const SynthTrackConfig& cfg) {
  if (!(cfg.duration_s > 0.0) || cfg.sample_rate <= 0 || !(cfg.events_per_s > 0.0)) {
    throw std::invalid_argument("synth_track: bad configuration");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int rate = cfg.sample_rate;
  const auto total = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));
  std::vector<double> x(total, 0.0);

  // Drone: two partials with slow amplitude modulation.
  for (int d = 0; d < 2; ++d) {
    const double f = 60.0 * std::pow(8.0, u(rng));
    const double am_hz = 0.25 + u(rng);
    const double ph = kTwoPi * u(rng);
    for (std::size_t n = 0; n < total; ++n) {
      const double t = static_cast<double>(n) / rate;
      x[n] += 0.08 * (1.0 + 0.8 * std::sin(kTwoPi * am_hz * t + ph)) * std::sin(kTwoPi * f * t + ph * 3);
    }
  }

  const auto events = static_cast<int>(std::ceil(cfg.events_per_s * cfg.duration_s));
  for (int e = 0; e < events; ++e) {
    const auto onset = static_cast<std::size_t>(u(rng) * static_cast<double>(total));
    if (u(rng) < 0.7) {
      add_note(x, onset, rate, rng);
    } else {
      add_burst(x, onset, rate, rng);
    }
  }
  normalize_peak(x, 0.5);
  return to_wave(x, rate);
}

WaveBuffer synth_noise(std::uint64_t seed, double duration_s, int sample_rate) {
  if (!(duration_s > 0.0) || sample_rate <= 0) throw std::invalid_argument("synth_noise: bad configuration");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto total = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<double> x(total, 0.0);

  // Coloured broadband floor: one-pole low-passed white noise plus some white.
  const double pole = 0.5 + 0.49 * u(rng);
  const double white = 0.2 + 0.6 * u(rng);
  double lp = 0.0;
  for (auto& v : x) {
    const double w = g(rng);
    lp = pole * lp + (1.0 - pole) * w;
    v = lp * 3.0 + white * w * 0.3;
  }
  // Babble-like layer: amplitude-modulated tones drifting in pitch.
  const int voices = 3 + static_cast<int>(u(rng) * 5.0);
  for (int k = 0; k < voices; ++k) {
    const double f = 150.0 + 1500.0 * u(rng);
    const double drift = 20.0 * (u(rng) - 0.5);
    const double am_hz = 2.0 + 6.0 * u(rng);
    const double ph = kTwoPi * u(rng);
    double phase = 0.0;
    for (std::size_t n = 0; n < total; ++n) {
      const double t = static_cast<double>(n) / sample_rate;
      phase += kTwoPi * (f + drift * std::sin(kTwoPi * 0.3 * t)) / sample_rate;
      x[n] += 0.3 * std::max(0.0, std::sin(kTwoPi * am_hz * t + ph)) * std::sin(phase);
    }
  }
  normalize_peak(x, 0.5);
  return to_wave(x, sample_rate);
}

WaveBuffer synth_rir(std::uint64_t seed, int sample_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const double rt60 = 0.15 + 0.45 * u(rng);
  const auto len = static_cast<std::size_t>(rt60 * sample_rate);
  const auto predelay = static_cast<std::size_t>((0.002 + 0.01 * u(rng)) * sample_rate);
  std::vector<double> h(len + predelay, 0.0);
  h[0] = 1.0;
  // -60 dB at rt60.
  const double decay = std::log(1000.0) / (rt60 * sample_rate);
  for (std::size_t n = 0; n < len; ++n) {
    h[predelay + n] += 0.3 * g(rng) * std::exp(-decay * static_cast<double>(n));
  }
  return to_wave(h, sample_rate);
}

std::vector<WaveBuffer> synth_tracks(int n, double duration_s, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("synth_tracks: negative count");
  std::vector<WaveBuffer> out(static_cast<std::size_t>(n));
  SynthTrackConfig cfg;
  cfg.duration_s = duration_s;
  parallel_for(out.size(), [&](std::size_t i) { out[i] = synth_track(mix_seed(seed, kTrackDomain, i), cfg); });
  return out;
}

std::vector<WaveBuffer> synth_noise_bank(NoiseSplit split, int n, double duration_s, std::uint64_t seed) {
  std::vector<WaveBuffer> out(static_cast<std::size_t>(std::max(n, 0)));
  const std::uint64_t domain = mix_seed(kNoiseDomain, static_cast<std::uint64_t>(split));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = synth_noise(mix_seed(seed, domain, i), duration_s); });
  return out;
}

std::vector<WaveBuffer> synth_rir_bank(int n, std::uint64_t seed) {
  std::vector<WaveBuffer> out(static_cast<std::size_t>(std::max(n, 0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = synth_rir(mix_seed(seed, kRirDomain, i));
  return out;
}

double correlation(std::span<const float> a, std::span<const float> b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

std::vector<std::filesystem::path> write_bank(const std::filesystem::path& root, const std::string& sub,
                                              const std::string& stem, const std::vector<WaveBuffer>& waves,
                                              const std::filesystem::path& manifest) {
  std::filesystem::create_directories(root / sub);
  std::ofstream list(manifest, std::ios::trunc);
  if (!list) throw std::runtime_error(manifest.string() + ": cannot open for writing");
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < waves.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04zu.wav", stem.c_str(), i);
    const auto rel = std::filesystem::path(sub) / name;
    write_wav(root / rel, waves[i]);
    list << rel.generic_string() << '\n';
    paths.push_back(root / rel);
  }
  return paths;
}

}  // namespace

CorpusLayout write_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg) {
  if (cfg.n_tracks < 1) throw std::invalid_argument("synth: n_tracks must be >= 1");
  if (!(cfg.duration_s >= 1.0)) throw std::invalid_argument("synth: duration must be >= 1 s");
  if (cfg.noise_clips < 0 || cfg.rirs < 0) throw std::invalid_argument("synth: negative bank size");
  std::filesystem::create_directories(dir);
  CorpusLayout layout;
  layout.tracks_manifest = dir / "tracks.txt";
  layout.noise_train_manifest = dir / "noise_train.txt";
  layout.noise_test_manifest = dir / "noise_test.txt";
  layout.rir_manifest = dir / "rirs.txt";
  layout.tracks = write_bank(dir, "tracks", "track", synth_tracks(cfg.n_tracks, cfg.duration_s, cfg.seed),
                             layout.tracks_manifest);
  write_bank(dir, "noise/train", "noise",
             synth_noise_bank(NoiseSplit::kTrain, cfg.noise_clips, cfg.noise_duration_s, cfg.seed),
             layout.noise_train_manifest);
  write_bank(dir, "noise/test", "noise",
             synth_noise_bank(NoiseSplit::kTest, cfg.noise_clips, cfg.noise_duration_s, cfg.seed),
             layout.noise_test_manifest);
  write_bank(dir, "rirs", "rir", synth_rir_bank(cfg.rirs, cfg.seed), layout.rir_manifest);
  return layout;
}

}  // namespace gnnfp
