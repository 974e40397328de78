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

#include "gnnfp/augment.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gnnfp {

namespace {

constexpr int kMaxCropAttempts = 32;
// Below this many taps direct convolution beats the FFT.
constexpr std::size_t kDirectConvTaps = 64;

double peak(std::span<const float> x) {
  double p = 0.0;
  for (float v : x) p = std::max(p, static_cast<double>(std::abs(v)));
  return p;
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(offset_ms_max >= 0.0)) {
    throw std::invalid_argument("augment: offset_ms_max must be >= 0");
  }
  if (!(snr_db_low <= snr_db_high)) {
    throw std::invalid_argument("augment: SNR range must satisfy low <= high");
  }
  if (!(reverb_prob >= 0.0 && reverb_prob <= 1.0)) {
    throw std::invalid_argument("augment: reverb probability must be in [0, 1]");
  }
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig cfg;
  cfg.offset_ms_max = 0.0;
  cfg.reverb_prob = 0.0;
  cfg.noise_enabled = false;
  cfg.anchor_offset = false;
  return cfg;
}

void AudioBank::add(std::string id, WaveBuffer clip) {
  if (clip.sample_rate != kCanonicalRate) clip = resample(clip, kCanonicalRate);
  validate(clip);
  ids.push_back(std::move(id));
  clips.push_back(std::move(clip));
}

AudioBank AudioBank::from_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error(manifest.string() + ": cannot open manifest");
  AudioBank bank;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = manifest.parent_path() / p;
    bank.add(p.stem().string(), load_audio(p));
  }
  return bank;
}

AudioBank AudioBank::from_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  AudioBank bank;
  for (const auto& p : paths) bank.add(p.stem().string(), load_audio(p));
  return bank;
}

std::ptrdiff_t offset_samples(double offset_ms, int sample_rate) {
  return static_cast<std::ptrdiff_t>(std::llround(offset_ms * sample_rate / 1000.0));
}

WaveBuffer time_offset(const WaveBuffer& source, std::size_t start,
                       std::size_t length, double offset_ms) {
  const auto shifted = static_cast<std::ptrdiff_t>(start) +
                       offset_samples(offset_ms, source.sample_rate);
  if (shifted < 0 ||
      static_cast<std::size_t>(shifted) + length > source.size()) {
    throw std::out_of_range("time_offset: shift of " + std::to_string(offset_ms) +
                            " ms exceeds available material");
  }
  return slice(source, static_cast<std::size_t>(shifted), length);
}

double draw_offset_ms(const AugmentConfig& cfg, Rng& rng) {
  if (cfg.offset_ms_max <= 0.0) return 0.0;
  std::uniform_real_distribution<double> dist(-cfg.offset_ms_max, cfg.offset_ms_max);
  return dist(rng);
}

NoiseMix mix_noise_crop(const WaveBuffer& wave, const WaveBuffer& noise_crop,
                        double snr_db) {
  if (noise_crop.size() != wave.size()) {
    throw std::invalid_argument("mix_noise: crop length differs from signal");
  }
  const double ps = mean_power(wave.samples);
  const double pn = mean_power(noise_crop.samples);
  if (ps <= 0.0) throw std::invalid_argument("mix_noise: zero-power signal");
  if (pn <= 0.0) throw std::invalid_argument("mix_noise: zero-power noise crop");
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));

  NoiseMix out;
  out.mixed = wave;
  out.noise = noise_crop;
  for (std::size_t i = 0; i < wave.size(); ++i) {
    out.noise.samples[i] = static_cast<float>(gain * noise_crop.samples[i]);
    out.mixed.samples[i] = wave.samples[i] + out.noise.samples[i];
  }
  return out;
}

NoiseMix mix_noise(const WaveBuffer& wave, const WaveBuffer& noise,
                   double snr_db, Rng& rng) {
  if (noise.size() < wave.size()) {
    throw std::invalid_argument("mix_noise: noise shorter than signal");
  }
  std::uniform_int_distribution<std::size_t> pick(0, noise.size() - wave.size());
  for (int attempt = 0; attempt < kMaxCropAttempts; ++attempt) {
    WaveBuffer crop = slice(noise, pick(rng), wave.size());
    if (mean_power(crop.samples) > 0.0) return mix_noise_crop(wave, crop, snr_db);
  }
  throw std::runtime_error("mix_noise: could not find a non-silent noise crop");
}

WaveBuffer conv_reverb(const WaveBuffer& wave, const WaveBuffer& rir,
                       bool normalize) {
  if (rir.empty()) throw std::invalid_argument("conv_reverb: empty impulse response");
  const std::size_t n = wave.size();
  const std::size_t m = std::min(rir.size(), n);  // later taps never reach the output
  std::vector<double> y(n, 0.0);

  if (m <= kDirectConvTaps) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t kmax = std::min(m - 1, i);
      double acc = 0.0;
      for (std::size_t k = 0; k <= kmax; ++k) acc += static_cast<double>(rir.samples[k]) * wave.samples[i - k];
      y[i] = acc;
    }
  } else {
    std::size_t size = 1;
    while (size < n + m - 1) size <<= 1;
    std::vector<double> a(size, 0.0), b(size, 0.0);
    std::copy(wave.samples.begin(), wave.samples.end(), a.begin());
    std::copy(rir.samples.begin(), rir.samples.begin() + static_cast<std::ptrdiff_t>(m), b.begin());
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> fa, fb;
    fft.fwd(fa, a);
    fft.fwd(fb, b);
    for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
    std::vector<double> full;
    fft.inv(full, fa);
    std::copy(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n), y.begin());
  }

  double scale = 1.0;
  if (normalize) {
    double out_peak = 0.0;
    for (double v : y) out_peak = std::max(out_peak, std::abs(v));
    const double in_peak = peak(wave.samples);
    if (out_peak > 0.0) scale = in_peak / out_peak;
  }
  WaveBuffer out;
  out.sample_rate = wave.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(y[i] * scale);
  return out;
}

WaveBuffer augment_view(const WaveBuffer& source, std::size_t start,
                        std::size_t length, const AugmentConfig& cfg,
                        const AudioBank* noise, const AudioBank* rirs,
                        Rng& rng) {
  cfg.validate();
  // Every draw happens unconditionally so the generator advances identically
  // regardless of which branches fire.
  const double offset_ms = draw_offset_ms(cfg, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double reverb_draw = unit(rng);
  std::uniform_real_distribution<double> snr_dist(cfg.snr_db_low, cfg.snr_db_high);
  const double snr_db = snr_dist(rng);

  WaveBuffer out = time_offset(source, start, length, offset_ms);

  if (reverb_draw < cfg.reverb_prob) {
    if (rirs == nullptr || rirs->empty()) {
      throw std::invalid_argument("augment_view: reverb enabled but RIR bank is empty");
    }
    std::uniform_int_distribution<std::size_t> pick(0, rirs->size() - 1);
    out = conv_reverb(out, rirs->clips[pick(rng)]);
  }
  if (cfg.noise_enabled) {
    if (noise == nullptr || noise->empty()) {
      throw std::invalid_argument("augment_view: noise enabled but noise bank is empty");
    }
    std::uniform_int_distribution<std::size_t> pick(0, noise->size() - 1);
    const WaveBuffer& clip = noise->clips[pick(rng)];
    if (mean_power(out.samples) > 0.0) out = mix_noise(out, clip, snr_db, rng).mixed;
  }
  return out;
}

WaveBuffer augment_view(const WaveBuffer& wave, const AugmentConfig& cfg,
                        const AudioBank* noise, const AudioBank* rirs,
                        Rng& rng) {
  AugmentConfig no_shift = cfg;
  no_shift.offset_ms_max = 0.0;
  return augment_view(wave, 0, wave.size(), no_shift, noise, rirs, rng);
}

}  // namespace gnnfp
