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

#include "gnnfp/audio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gnnfp {

void validate(const WaveBuffer& wave) {
  if (wave.sample_rate <= 0) {
    throw std::invalid_argument("sample rate must be positive, got " +
                                std::to_string(wave.sample_rate));
  }
  for (float s : wave.samples) {
    if (!std::isfinite(s)) {
      throw std::invalid_argument("wave contains non-finite samples");
    }
  }
}

void SegmentSpec::validate() const {
  if (!(hop_s > 0.0) || !(hop_s <= window_s)) {
    throw std::invalid_argument("segment spec requires 0 < hop <= window");
  }
}

std::size_t SegmentSpec::window_samples(int rate) const {
  return static_cast<std::size_t>(std::llround(window_s * rate));
}

std::size_t SegmentSpec::hop_samples(int rate) const {
  return static_cast<std::size_t>(std::llround(hop_s * rate));
}

namespace {

// Zeroth-order modified Bessel function, for the Kaiser window.
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

constexpr int kHalfTaps = 16;  // zero crossings per side
constexpr double kTableDensity = 512.0;  // kernel table entries per input sample
constexpr double kKaiserBeta = 8.6;
constexpr double kRolloff = 0.95;  // cutoff as a fraction of the lower Nyquist

}  // namespace

WaveBuffer resample(const WaveBuffer& wave, int target_rate) {
  if (wave.empty()) throw std::invalid_argument("resample: empty input");
  if (target_rate <= 0) {
    throw std::invalid_argument("resample: target rate must be positive");
  }
  if (wave.sample_rate == target_rate) return wave;

  const double ratio = static_cast<double>(target_rate) / wave.sample_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(wave.size()) * ratio));
  // Cutoff in cycles per input sample.
  const double cutoff = 0.5 * std::min(1.0, ratio) * kRolloff;
  const double half_width = kHalfTaps / (2.0 * cutoff);  // in input samples

  // Tabulated one-sided kernel, linearly interpolated.
  const double i0_beta = bessel_i0(kKaiserBeta);
  const auto table_len =
      static_cast<std::size_t>(std::ceil(half_width * kTableDensity)) + 2;
  std::vector<double> table(table_len);
  for (std::size_t i = 0; i < table_len; ++i) {
    const double x = static_cast<double>(i) / kTableDensity;
    const double r = std::min(1.0, x / half_width);
    const double win = bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
    const double arg = 2.0 * cutoff * x;
    const double sinc = arg == 0.0 ? 1.0
                                   : std::sin(std::numbers::pi * arg) /
                                         (std::numbers::pi * arg);
    table[i] = x >= half_width ? 0.0 : 2.0 * cutoff * sinc * win;
  }
  auto kernel = [&](double x) {
    const double pos = std::abs(x) * kTableDensity;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= table_len) return 0.0;
    const double frac = pos - static_cast<double>(i);
    return table[i] + frac * (table[i + 1] - table[i]);
  };

  const auto n_in = static_cast<std::ptrdiff_t>(wave.size());
  WaveBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) / ratio;  // position in input
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + half_width));
    double acc = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0);
         k <= std::min(hi, n_in - 1); ++k) {
      acc += wave.samples[static_cast<std::size_t>(k)] *
             kernel(static_cast<double>(k) - t);
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

std::size_t segment_count(std::size_t num_samples, const SegmentSpec& spec,
                          int rate) {
  const std::size_t win = spec.window_samples(rate);
  const std::size_t hop = spec.hop_samples(rate);
  if (win == 0 || hop == 0 || num_samples < win) return 0;
  return (num_samples - win) / hop + 1;
}

std::vector<WaveBuffer> segment(const WaveBuffer& wave,
                                const SegmentSpec& spec) {
  spec.validate();
  const std::size_t win = spec.window_samples(wave.sample_rate);
  const std::size_t hop = spec.hop_samples(wave.sample_rate);
  if (wave.size() < win) {
    throw std::invalid_argument("segment: wave shorter than one window");
  }
  const std::size_t count = segment_count(wave.size(), spec, wave.sample_rate);
  std::vector<WaveBuffer> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(slice(wave, i * hop, win));
  }
  return out;
}

WaveBuffer slice(const WaveBuffer& wave, std::size_t start,
                 std::size_t length) {
  if (start + length > wave.size()) {
    throw std::out_of_range("slice exceeds wave bounds");
  }
  WaveBuffer out;
  out.sample_rate = wave.sample_rate;
  const auto first = wave.samples.begin() + static_cast<std::ptrdiff_t>(start);
  out.samples.assign(first, first + static_cast<std::ptrdiff_t>(length));
  return out;
}

WaveBuffer load_audio(const std::filesystem::path& path) {
  return resample(read_wav(path), kCanonicalRate);
}

double mean_power(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (float s : samples) acc += static_cast<double>(s) * s;
  return acc / static_cast<double>(samples.size());
}

}  // namespace gnnfp
