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

#include "gnnfp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gnnfp/parallel.hpp"

namespace gnnfp {

namespace {

// Stream tags for sub-seeds.
constexpr std::uint64_t kOrderStream = 0x6f72646572ull;
constexpr std::uint64_t kStartStream = 0x7374617274ull;
constexpr std::uint64_t kAugmentStream = 0x6175676dull;

}  // namespace

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("train config: tau must be > 0");
  if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train config: base_lr must be > 0");
  if (samples_per_track < 1) {
    throw std::invalid_argument("train config: samples_per_track must be >= 1");
  }
}

std::pair<PositionalFeature, PositionalFeature> make_pair_views(
    const SegmentRef& seg, const AugmentConfig& cfg, const AugmentBanks& banks,
    const MelConfig& mel, std::uint64_t seed) {
  Rng rng(seed);
  const double anchor_shift = cfg.anchor_offset ? draw_offset_ms(cfg, rng) : 0.0;
  const WaveBuffer anchor = time_offset(*seg.source, seg.start, seg.length, anchor_shift);
  const WaveBuffer positive =
      augment_view(*seg.source, seg.start, seg.length, cfg, banks.noise, banks.rirs, rng);
  return {extract_features(anchor, mel), extract_features(positive, mel)};
}

PairViews make_pairs(std::span<const SegmentRef> segments, const AugmentConfig& cfg,
                     const AugmentBanks& banks, const MelConfig& mel, Rng& rng) {
  if (segments.size() < 2) throw std::invalid_argument("make_pairs: need at least 2 segments");
  std::vector<std::uint64_t> seeds(segments.size());
  for (auto& s : seeds) s = rng();
  PairViews out;
  out.anchors.resize(segments.size());
  out.positives.resize(segments.size());
  parallel_for(segments.size(), [&](std::size_t i) {
    auto [a, p] = make_pair_views(segments[i], cfg, banks, mel, seeds[i]);
    out.anchors[i] = std::move(a);
    out.positives[i] = std::move(p);
  });
  return out;
}

std::vector<PositionalFeature> interleave(const PairViews& pairs) {
  std::vector<PositionalFeature> out;
  out.reserve(2 * pairs.anchors.size());
  for (std::size_t i = 0; i < pairs.anchors.size(); ++i) {
    out.push_back(pairs.anchors[i]);
    out.push_back(pairs.positives[i]);
  }
  return out;
}

LossAndGrad nt_xent_loss(const nn::Mat<double>& embeddings, double tau) {
  const nn::Index rows = embeddings.rows();
  if (rows < 2 || rows % 2 != 0) {
    throw std::invalid_argument("nt_xent_loss: need an even number (>= 2) of embeddings");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("nt_xent_loss: tau must be > 0");

  nn::Mat<double> unit(rows, embeddings.cols());
  std::vector<double> norms(static_cast<std::size_t>(rows));
  for (nn::Index i = 0; i < rows; ++i) {
    norms[i] = embeddings.row(i).norm();
    if (!(norms[i] > 0.0)) throw std::invalid_argument("nt_xent_loss: zero embedding");
    unit.row(i) = embeddings.row(i) / norms[i];
  }
  const nn::Mat<double> sim = unit * unit.transpose();

  // coeff(i, k) = d loss / d sim(i, k) through anchor i's term.
  nn::Mat<double> coeff = nn::Mat<double>::Zero(rows, rows);
  double total = 0.0;
  for (nn::Index i = 0; i < rows; ++i) {
    const nn::Index pos = i ^ 1;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (nn::Index k = 0; k < rows; ++k) {
      if (k != i) max_logit = std::max(max_logit, sim(i, k) / tau);
    }
    double denom = 0.0;
    for (nn::Index k = 0; k < rows; ++k) {
      if (k != i) denom += std::exp(sim(i, k) / tau - max_logit);
    }
    const double log_denom = max_logit + std::log(denom);
    total += log_denom - sim(i, pos) / tau;
    for (nn::Index k = 0; k < rows; ++k) {
      if (k == i) continue;
      const double softmax = std::exp(sim(i, k) / tau - log_denom);
      coeff(i, k) = (softmax - (k == pos ? 1.0 : 0.0)) / (tau * static_cast<double>(rows));
    }
  }

  LossAndGrad out;
  out.loss = total / static_cast<double>(rows);
  // sim is symmetric, so each entry collects both anchors' contributions.
  const nn::Mat<double> d_unit = (coeff + coeff.transpose()) * unit;
  out.grad.resize(rows, embeddings.cols());
  for (nn::Index i = 0; i < rows; ++i) {
    const double radial = unit.row(i).dot(d_unit.row(i));
    out.grad.row(i) = (d_unit.row(i) - radial * unit.row(i)) / norms[i];
  }
  return out;
}

double lr_at(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) return base_lr;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void Adam::step(Encoder<float>& encoder, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.adam_beta1);
  const auto b2 = static_cast<float>(cfg_.adam_beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.adam_eps);
  std::size_t slot = 0;
  encoder.visit([&](const std::string&, nn::Param<float>& p) {
    if (p.buffer) return;
    if (slot >= m_.size()) {
      m_.push_back(nn::Mat<float>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(nn::Mat<float>::Zero(p.value.rows(), p.value.cols()));
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    m = b1 * m + (1.0f - b1) * p.grad;
    v = b2 * v + (1.0f - b2) * p.grad.cwiseAbs2();
    p.value.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
    ++slot;
  });
}

NonFiniteLoss::NonFiniteLoss(long batch, double lr, double loss)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "non-finite loss at batch " << batch << " (lr " << lr << ", loss " << loss << ")";
        return os.str();
      }()) {}

long steps_per_epoch(std::size_t samples, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  return static_cast<long>(samples / b + (samples % b >= 2 ? 1 : 0));
}

FitResult fit(std::span<const WaveBuffer> tracks, Encoder<float>& encoder,
              const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  options.augment.validate();
  options.segment.validate();
  if (tracks.empty()) throw std::invalid_argument("fit: empty dataset");

  const std::size_t window = options.segment.window_samples(kCanonicalRate);
  const auto margin = static_cast<std::size_t>(
      std::abs(offset_samples(options.augment.offset_ms_max, kCanonicalRate)));
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    if (tracks[t].sample_rate != kCanonicalRate) {
      throw std::invalid_argument("fit: track " + std::to_string(t) + " is not at 16 kHz");
    }
    if (tracks[t].size() < window + 2 * margin) {
      throw std::invalid_argument("fit: track " + std::to_string(t) +
                                  " is shorter than one window plus the offset margin");
    }
  }

  const std::size_t samples = tracks.size() * static_cast<std::size_t>(cfg.samples_per_track);
  const long per_epoch = steps_per_epoch(samples, cfg.batch_size);
  const long total_steps = per_epoch * cfg.epochs;

  std::ofstream metrics;
  if (options.metrics_csv) {
    const bool fresh = !std::filesystem::exists(*options.metrics_csv);
    metrics.open(*options.metrics_csv, std::ios::app);
    if (!metrics) throw std::runtime_error(options.metrics_csv->string() + ": cannot open");
    if (fresh) metrics << "epoch,step,lr,loss\n";
    metrics << std::setprecision(10);
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  Adam adam(cfg);
  FitResult result;
  result.total_steps = total_steps;
  long step = 0;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(samples);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix_seed(cfg.seed, kOrderStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0.0;
    long batches = 0;
    for (long b = 0; b < per_epoch; ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t end = std::min(samples, begin + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t n = end - begin;

      std::vector<PositionalFeature> views(2 * n);
      parallel_for(n, [&](std::size_t i) {
        const std::size_t sample = order[begin + i];
        const WaveBuffer& track = tracks[sample / static_cast<std::size_t>(cfg.samples_per_track)];
        Rng start_rng(mix_seed(cfg.seed ^ kStartStream, static_cast<std::uint64_t>(epoch), sample));
        std::uniform_int_distribution<std::size_t> pick(margin, track.size() - window - margin);
        const SegmentRef seg{&track, pick(start_rng), window};
        auto [a, p] = make_pair_views(
            seg, options.augment, options.banks, options.mel,
            mix_seed(cfg.seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch), sample));
        views[2 * i] = std::move(a);
        views[2 * i + 1] = std::move(p);
      });

      const double lr = lr_at(step, total_steps, cfg.base_lr);
      encoder.zero_grad();
      typename Encoder<float>::Cache cache;
      const nn::Mat<float> z =
          encoder.forward_train(Encoder<float>::pack(views), static_cast<int>(views.size()), cache);
      const LossAndGrad lg = nt_xent_loss(z.cast<double>(), cfg.tau);
      if (!std::isfinite(lg.loss)) throw NonFiniteLoss(step, lr, lg.loss);
      encoder.backward(lg.grad.cast<float>(), cache);
      adam.step(encoder, lr);
      ++step;

      loss_sum += lg.loss;
      ++batches;
      if (metrics) metrics << epoch << ',' << step << ',' << lr << ',' << lg.loss << '\n';
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.steps = step;
    stats.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(stats);
    if (metrics) metrics.flush();

    if (options.checkpoint_dir) {
      const nlohmann::json extra = {{"epoch", epoch}, {"mean_loss", stats.mean_loss}};
      save_checkpoint(*options.checkpoint_dir / "last.gfpm", encoder, extra);
      if (stats.mean_loss < best_loss) {
        best_loss = stats.mean_loss;
        save_checkpoint(*options.checkpoint_dir / "best.gfpm", encoder, extra);
      }
    }
    if (options.on_epoch) options.on_epoch(stats);
  }
  return result;
}

}  // namespace gnnfp
