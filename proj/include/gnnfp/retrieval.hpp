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

// Query-to-reference matching.
//
// A query is cut into m overlapping segments at the reference hop. Each
// segment fingerprint is looked up in the ANN index (top-n); hit ids in row i
// are shifted back by i so that every row votes for a start id. The unique
// start ids are then rescored with the mean inner product between the query
// sequence and the aligned full-precision reference fingerprints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnfp/audio.hpp"
#include "gnnfp/encoder.hpp"
#include "gnnfp/features.hpp"
#include "gnnfp/index.hpp"

namespace gnnfp {

struct TrackEntry {
  std::string track_id;
  std::string path;
  std::uint64_t first_id = 0;
  std::uint64_t count = 0;
};

/// Reference fingerprints with dense global ids, grouped by track.
class ReferenceDb {
 public:
  explicit ReferenceDb(const SegmentSpec& spec = {}, int dim = 128);

  const SegmentSpec& spec() const { return spec_; }
  int dim() const { return dim_; }
  std::size_t size() const { return static_cast<std::size_t>(fingerprints_.rows()); }
  const FloatMatrix& fingerprints() const { return fingerprints_; }
  const std::vector<TrackEntry>& tracks() const { return tracks_; }

  /// Appends a track; its segments get the next consecutive ids.
  const TrackEntry& add_track(std::string track_id, std::string path, const FloatMatrix& fps);

  /// Index into tracks() of the track holding `id`.
  std::size_t track_of(std::uint64_t id) const;
  /// Segment offset of `id` within its track.
  std::uint64_t offset_in_track(std::uint64_t id) const;

  /// Store: magic "GRFP", u16 version, u16 dim, u64 count, row-major f32.
  /// Manifest: one JSON object per line and per track.
  void save(const std::filesystem::path& store, const std::filesystem::path& manifest) const;
  static ReferenceDb load(const std::filesystem::path& store, const std::filesystem::path& manifest);

  static constexpr std::uint16_t kStoreVersion = 1;

 private:
  SegmentSpec spec_;
  int dim_;
  FloatMatrix fingerprints_;
  std::vector<TrackEntry> tracks_;
};

/// Companion manifest path used by the command-line tools.
std::filesystem::path manifest_path_for(const std::filesystem::path& store);

/// One L2-normalised fingerprint per segment, in temporal order.
FloatMatrix fingerprint_track(const WaveBuffer& wave, const Encoder<float>& encoder,
                              const SegmentSpec& spec, const MelConfig& mel = {});

using IdMatrix = std::vector<std::vector<std::int64_t>>;

/// Row i shifted by -i. Negative results are kept so that the shift is
/// invertible; candidate_set drops them.
IdMatrix offset_compensate(const IdMatrix& retrieved);

/// Sorted unique ids in [0, db_size).
std::vector<std::uint64_t> candidate_set(const IdMatrix& compensated, std::size_t db_size);

/// (id, votes) over valid ids, sorted by id. A start id gets at most one vote
/// per row.
std::vector<std::pair<std::uint64_t, int>> vote_counts(const IdMatrix& compensated,
                                                       std::size_t db_size);

/// Mean inner product between query rows and db rows k..k+m-1. Empty when the
/// span runs past the db or crosses a track boundary.
std::optional<double> sequence_score(const FloatMatrix& query, const ReferenceDb& db,
                                     std::uint64_t k);

struct IdentifyOptions {
  int nprobe = 8;
  int topn = 20;
  /// Reject the argmax when its score is below this.
  std::optional<double> min_score;
};

struct MatchResult {
  std::string track_id;
  std::size_t track_index = 0;
  std::uint64_t start_id = 0;
  std::uint64_t start_segment = 0;  // within the track
  double start_ms = 0.0;
  double score = 0.0;
  /// Best minus second-best candidate score; empty with a single candidate.
  std::optional<double> runner_up_margin;
  std::size_t candidates = 0;

  nlohmann::json to_json() const;
};

/// Matching for a precomputed query sequence.
std::optional<MatchResult> identify_sequence(const FloatMatrix& query, const ReferenceDb& db,
                                             const IvfPqIndex& index, const IdentifyOptions& opts);

/// Fingerprints the query at the db hop, then identify_sequence.
std::optional<MatchResult> identify(const WaveBuffer& query, const ReferenceDb& db,
                                    const IvfPqIndex& index, const Encoder<float>& encoder,
                                    const IdentifyOptions& opts, const MelConfig& mel = {});

struct EvalQuery {
  std::filesystem::path path;
  std::string track_id;
  double start_ms = 0.0;
};

/// Line-delimited JSON: {"path", "track_id", "start_ms"}. Relative paths are
/// resolved against the list's directory.
std::vector<EvalQuery> load_eval_list(const std::filesystem::path& list);
void save_eval_list(const std::filesystem::path& list, std::span<const EvalQuery> queries);

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double top1_hit_rate = 0.0;  // percent
  double margin_ms = 50.0;

  nlohmann::json to_json() const;
};

/// Correct iff the track matches and |predicted - true start| <= margin_ms.
bool is_correct(const std::optional<MatchResult>& prediction, const EvalQuery& truth,
                double margin_ms);

EvalReport score_predictions(std::span<const std::optional<MatchResult>> predictions,
                             std::span<const EvalQuery> truths, double margin_ms);

struct Evaluation {
  EvalReport report;
  std::vector<std::optional<MatchResult>> predictions;
};

/// Identifies every query wave (index-aligned with `truths`) and scores them.
Evaluation evaluate(std::span<const WaveBuffer> waves, std::span<const EvalQuery> truths,
                    const ReferenceDb& db, const IvfPqIndex& index, const Encoder<float>& encoder,
                    const IdentifyOptions& opts, double margin_ms = 50.0, const MelConfig& mel = {});

}  // namespace gnnfp
