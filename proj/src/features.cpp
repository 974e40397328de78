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

#include "gnnfp/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace gnnfp {

namespace {

constexpr double kMinLogHz = 1000.0;
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

}  // namespace

void MelConfig::validate() const {
  if (sample_rate <= 0 || n_fft <= 0 || hop_length <= 0 || n_mels <= 0 ||
      segment_samples <= 0) {
    throw std::invalid_argument("mel config: sizes must be positive");
  }
  if (!(f_min >= 0.0) || !(f_max > f_min) || f_max > sample_rate / 2.0) {
    throw std::invalid_argument("mel config: need 0 <= f_min < f_max <= Nyquist");
  }
  if (n_frames() < 2) {
    throw std::invalid_argument("mel config: fewer than two frames per segment");
  }
  if (!(log_floor > 0.0)) {
    throw std::invalid_argument("mel config: log floor must be positive");
  }
}

double hz_to_mel(double hz) {
  if (hz < kMinLogHz) return hz / kLinearStep;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMinLogMel) return mel * kLinearStep;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel =
        mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (cfg.n_mels + 1);
    edges[i] = mel_to_hz(mel);
  }

  std::vector<std::vector<double>> bank(
      static_cast<std::size_t>(cfg.n_mels), std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      bank[m][k] = w * norm;
    }
  }
  return bank;
}

struct LogMelExtractor::Impl {
  Eigen::FFT<double> fft;
  std::vector<double> window;
  std::vector<std::vector<double>> bank;
  std::vector<double> frame;
  std::vector<std::complex<double>> spectrum;
  std::vector<double> power;
};

LogMelExtractor::LogMelExtractor(const MelConfig& cfg)
    : cfg_(cfg), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  impl_->fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  impl_->window.resize(static_cast<std::size_t>(cfg_.n_fft));
  // Periodic Hann.
  for (int i = 0; i < cfg_.n_fft; ++i) {
    impl_->window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg_.n_fft);
  }
  impl_->bank = mel_filterbank(cfg_);
  impl_->frame.resize(static_cast<std::size_t>(cfg_.n_fft));
  impl_->power.resize(static_cast<std::size_t>(cfg_.n_fft / 2 + 1));
}

LogMelExtractor::~LogMelExtractor() = default;
LogMelExtractor::LogMelExtractor(LogMelExtractor&&) noexcept = default;
LogMelExtractor& LogMelExtractor::operator=(LogMelExtractor&&) noexcept = default;

MelSpec LogMelExtractor::compute(const WaveBuffer& segment) {
  if (segment.empty()) throw std::invalid_argument("log_mel: empty segment");
  for (float s : segment.samples) {
    if (std::isnan(s)) throw std::invalid_argument("log_mel: NaN in input");
  }
  const auto len = static_cast<long>(segment.size());
  if (std::abs(len - cfg_.segment_samples) > cfg_.hop_length) {
    throw std::invalid_argument("log_mel: segment length " + std::to_string(len) +
                                " is not within one hop of " +
                                std::to_string(cfg_.segment_samples));
  }

  const int n_frames = cfg_.n_frames();
  const int half = cfg_.n_fft / 2;
  MelSpec out;
  out.n_freq = cfg_.n_mels;
  out.n_time = n_frames;
  out.values.resize(static_cast<std::size_t>(n_frames) * cfg_.n_mels);

  // Reflect padding around the signal; frame t is centred on sample t * hop.
  auto sample_at = [&](long i) -> double {
    while (i < 0 || i >= len) {
      if (i < 0) i = -i;
      if (i >= len) i = 2 * (len - 1) - i;
      if (len == 1) return segment.samples[0];
    }
    return segment.samples[static_cast<std::size_t>(i)];
  };

  for (int t = 0; t < n_frames; ++t) {
    const long start = static_cast<long>(t) * cfg_.hop_length - half;
    for (int i = 0; i < cfg_.n_fft; ++i) {
      impl_->frame[i] = sample_at(start + i) * impl_->window[i];
    }
    impl_->fft.fwd(impl_->spectrum, impl_->frame);
    for (std::size_t k = 0; k < impl_->power.size(); ++k) {
      impl_->power[k] = std::norm(impl_->spectrum[k]);
    }
    for (int m = 0; m < cfg_.n_mels; ++m) {
      const auto& w = impl_->bank[m];
      double energy = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) energy += w[k] * impl_->power[k];
      out.at(m, t) = static_cast<float>(std::log(energy + cfg_.log_floor));
    }
  }
  return out;
}

MelSpec log_mel(const WaveBuffer& segment, const MelConfig& cfg) {
  thread_local std::optional<LogMelExtractor> cached;
  if (!cached || !(cached->config() == cfg)) cached.emplace(cfg);
  return cached->compute(segment);
}

PositionalFeature add_positional_channels(const MelSpec& spec) {
  if (spec.n_freq < 2 || spec.n_time < 2 ||
      spec.values.size() != static_cast<std::size_t>(spec.n_freq) * spec.n_time) {
    throw std::invalid_argument("add_positional_channels: malformed MelSpec");
  }
  PositionalFeature out;
  out.n_freq = spec.n_freq;
  out.n_time = spec.n_time;
  out.tensor.resize(3 * spec.values.size());
  const float t_scale = 1.0f / static_cast<float>(spec.n_time - 1);
  const float f_scale = 1.0f / static_cast<float>(spec.n_freq - 1);
  for (int f = 0; f < spec.n_freq; ++f) {
    for (int t = 0; t < spec.n_time; ++t) {
      out.at(0, f, t) = spec.at(f, t);
      out.at(1, f, t) = static_cast<float>(t) * t_scale;
      out.at(2, f, t) = static_cast<float>(f) * f_scale;
    }
  }
  return out;
}

void standardize_amplitude(PositionalFeature& feature) {
  const std::size_t n = static_cast<std::size_t>(feature.n_freq) * feature.n_time;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += feature.tensor[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = feature.tensor[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + 1e-6);
  for (std::size_t i = 0; i < n; ++i) {
    feature.tensor[i] = static_cast<float>((feature.tensor[i] - mean) * inv_std);
  }
}

PositionalFeature extract_features(const WaveBuffer& segment,
                                   const MelConfig& cfg) {
  auto feature = add_positional_channels(log_mel(segment, cfg));
  standardize_amplitude(feature);
  return feature;
}

}  // namespace gnnfp
