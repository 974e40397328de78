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
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/augment.hpp"
#include "gnnfp/encoder.hpp"
#include "gnnfp/features.hpp"

namespace gnnfp {

struct TrainConfig {
  double tau = 0.05;
  int batch_size = 256;
  int epochs = 400;
  double base_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Random segments drawn from every track per epoch.
  int samples_per_track = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A window of `length` samples at `start` inside `source`. The source must
/// outlive the reference.
struct SegmentRef {
  const WaveBuffer* source = nullptr;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Anchor and positive feature views, index-aligned.
struct PairViews {
  std::vector<PositionalFeature> anchors;
  std::vector<PositionalFeature> positives;
};

struct AugmentBanks {
  const AudioBank* noise = nullptr;
  const AudioBank* rirs = nullptr;
};

/// Views for one segment: the anchor gets a time offset only (if
/// cfg.anchor_offset), the positive the full augmentation chain. Pure
/// function of the arguments.
std::pair<PositionalFeature, PositionalFeature> make_pair_views(
    const SegmentRef& seg, const AugmentConfig& cfg, const AugmentBanks& banks,
    const MelConfig& mel, std::uint64_t seed);

/// Per-segment seeds are drawn from `rng` in order, so pairing is reproducible
/// for a given generator state.
PairViews make_pairs(std::span<const SegmentRef> segments, const AugmentConfig& cfg,
                     const AugmentBanks& banks, const MelConfig& mel, Rng& rng);

/// Interleaves anchors and positives as rows (2k, 2k + 1).
std::vector<PositionalFeature> interleave(const PairViews& pairs);

struct LossAndGrad {
  double loss = 0.0;
  nn::Mat<double> grad;  // d loss / d embeddings, same shape as the input
};

/// NT-Xent over 2N embeddings where rows (2k, 2k + 1) are the two views of
/// sample k. Similarity is cosine similarity; the log-sum-exp is stabilised by
/// max subtraction.
LossAndGrad nt_xent_loss(const nn::Mat<double>& embeddings, double tau);

/// Cosine decay from base_lr at step 0 to 0 at total_steps, no warmup.
double lr_at(long step, long total_steps, double base_lr);

/// Adam over every non-buffer parameter of an encoder.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(Encoder<float>& encoder, double lr);
  long steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<nn::Mat<float>> m_;
  std::vector<nn::Mat<float>> v_;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(long batch, double lr, double loss);
};

struct EpochStats {
  int epoch = 0;
  long steps = 0;  // cumulative
  double mean_loss = 0.0;
  double seconds = 0.0;
};

struct FitOptions {
  SegmentSpec segment;
  MelConfig mel;
  AugmentConfig augment;
  AugmentBanks banks;
  /// When set: <dir>/last.gfpm every epoch and <dir>/best.gfpm on improvement.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// When set: one CSV row (epoch, step, lr, loss) per optimisation step.
  std::optional<std::filesystem::path> metrics_csv;
  std::function<void(const EpochStats&)> on_epoch;
};

struct FitResult {
  std::vector<EpochStats> epochs;
  long total_steps = 0;
};

/// Optimisation steps per epoch for a dataset of `samples` segments. The last
/// partial batch is kept when it has at least two samples.
long steps_per_epoch(std::size_t samples, int batch_size);

/// Contrastive training loop: sample segments -> make pairs -> encode ->
/// NT-Xent -> Adam at the cosine-decayed rate.
FitResult fit(std::span<const WaveBuffer> tracks, Encoder<float>& encoder,
              const TrainConfig& cfg, const FitOptions& options);

}  // namespace gnnfp
