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

#include "gnnfp/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "gnnfp/binary_io.hpp"
#include "gnnfp/parallel.hpp"

namespace gnnfp {

using nlohmann::json;

ReferenceDb::ReferenceDb(const SegmentSpec& spec, int dim) : spec_(spec), dim_(dim) {
  spec_.validate();
  if (dim_ < 1 || dim_ > 65535) throw std::invalid_argument("reference db: bad dim");
  fingerprints_.resize(0, dim_);
}

const TrackEntry& ReferenceDb::add_track(std::string track_id, std::string path, const FloatMatrix& fps) {
  if (fps.rows() == 0) throw std::invalid_argument("reference db: track " + track_id + " has no segments");
  if (fps.cols() != dim_) throw std::invalid_argument("reference db: fingerprint dim mismatch");
  TrackEntry entry{std::move(track_id), std::move(path), size(), static_cast<std::uint64_t>(fps.rows())};
  FloatMatrix grown(fingerprints_.rows() + fps.rows(), dim_);
  grown.topRows(fingerprints_.rows()) = fingerprints_;
  grown.bottomRows(fps.rows()) = fps;
  fingerprints_ = std::move(grown);
  tracks_.push_back(std::move(entry));
  return tracks_.back();
}

std::size_t ReferenceDb::track_of(std::uint64_t id) const {
  if (id >= size()) throw std::out_of_range("reference db: id " + std::to_string(id) + " out of range");
  auto it = std::upper_bound(tracks_.begin(), tracks_.end(), id,
                             [](std::uint64_t v, const TrackEntry& t) { return v < t.first_id; });
  return static_cast<std::size_t>(std::prev(it) - tracks_.begin());
}

std::uint64_t ReferenceDb::offset_in_track(std::uint64_t id) const {
  return id - tracks_[track_of(id)].first_id;
}

void ReferenceDb::save(const std::filesystem::path& store, const std::filesystem::path& manifest) const {
  {
    std::ofstream out(store, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(store.string() + ": cannot open for writing");
    BinaryWriter w(out);
    w.bytes("GRFP", 4);
    w.u16(kStoreVersion);
    w.u16(static_cast<std::uint16_t>(dim_));
    w.u64(size());
    w.array(std::span<const float>(fingerprints_.data(), static_cast<std::size_t>(fingerprints_.size())));
    if (!out) throw std::runtime_error(store.string() + ": write failed");
  }
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw std::runtime_error(manifest.string() + ": cannot open for writing");
  for (const auto& t : tracks_) {
    json rec = {{"track_id", t.track_id},  {"path", t.path},
                {"first_id", t.first_id},  {"count", t.count},
                {"hop_s", spec_.hop_s},    {"window_s", spec_.window_s}};
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error(manifest.string() + ": write failed");
}

ReferenceDb ReferenceDb::load(const std::filesystem::path& store, const std::filesystem::path& manifest) {
  std::ifstream mf(manifest);
  if (!mf) throw std::runtime_error(manifest.string() + ": cannot open manifest");
  std::vector<TrackEntry> tracks;
  std::optional<SegmentSpec> spec;
  std::string line;
  for (int lineno = 1; std::getline(mf, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
      SegmentSpec s{rec.at("window_s").get<double>(), rec.at("hop_s").get<double>()};
      if (spec && (spec->hop_s != s.hop_s || spec->window_s != s.window_s)) {
        throw std::runtime_error("inconsistent hop/window across tracks");
      }
      spec = s;
      tracks.push_back({rec.at("track_id").get<std::string>(), rec.at("path").get<std::string>(),
                        rec.at("first_id").get<std::uint64_t>(), rec.at("count").get<std::uint64_t>()});
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }

  std::ifstream in(store, std::ios::binary);
  if (!in) throw std::runtime_error(store.string() + ": cannot open fingerprint store");
  BinaryReader r(in);
  r.expect_magic("GRFP");
  const std::uint16_t version = r.u16();
  if (version != kStoreVersion) {
    throw std::runtime_error(store.string() + ": unsupported store version " + std::to_string(version));
  }
  const int dim = r.u16();
  const std::uint64_t count = r.u64();

  ReferenceDb db(spec.value_or(SegmentSpec{}), dim);
  db.fingerprints_.resize(static_cast<Eigen::Index>(count), dim);
  r.array(std::span<float>(db.fingerprints_.data(), static_cast<std::size_t>(db.fingerprints_.size())));

  std::uint64_t next = 0;
  for (const auto& t : tracks) {
    if (t.first_id != next || t.count == 0) {
      throw std::runtime_error(manifest.string() + ": track " + t.track_id + " breaks the dense id layout");
    }
    next += t.count;
  }
  if (next != count) {
    throw std::runtime_error(manifest.string() + ": manifest covers " + std::to_string(next) +
                             " segments but the store holds " + std::to_string(count));
  }
  db.tracks_ = std::move(tracks);
  return db;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& store) {
  return std::filesystem::path(store.string() + ".jsonl");
}

FloatMatrix fingerprint_track(const WaveBuffer& wave, const Encoder<float>& encoder,
                              const SegmentSpec& spec, const MelConfig& mel) {
  if (static_cast<std::size_t>(mel.segment_samples) != spec.window_samples(wave.sample_rate)) {
    throw std::invalid_argument("fingerprint_track: mel segment length differs from the window");
  }
  const auto segments = segment(wave, spec);
  if (segments.empty()) throw std::invalid_argument("fingerprint_track: audio shorter than one window");

  std::vector<PositionalFeature> features(segments.size());
  parallel_for(segments.size(), [&](std::size_t i) { features[i] = extract_features(segments[i], mel); });

  constexpr std::size_t kBatch = 64;
  const std::size_t n_batches = (features.size() + kBatch - 1) / kBatch;
  const int dim = encoder.config().embed_dim;
  FloatMatrix out(static_cast<Eigen::Index>(features.size()), dim);
  parallel_for(n_batches, [&](std::size_t b) {
    const std::size_t begin = b * kBatch;
    const std::size_t len = std::min(kBatch, features.size() - begin);
    const auto z = encoder.encode(std::span<const PositionalFeature>(features).subspan(begin, len));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(len)) = z;
  });
  return out;
}

IdMatrix offset_compensate(const IdMatrix& retrieved) {
  IdMatrix out = retrieved;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (auto& id : out[i]) id -= static_cast<std::int64_t>(i);
  }
  return out;
}

std::vector<std::uint64_t> candidate_set(const IdMatrix& compensated, std::size_t db_size) {
  std::vector<std::uint64_t> ids;
  for (const auto& row : compensated) {
    for (std::int64_t id : row) {
      if (id >= 0 && static_cast<std::uint64_t>(id) < db_size) ids.push_back(static_cast<std::uint64_t>(id));
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<std::pair<std::uint64_t, int>> vote_counts(const IdMatrix& compensated, std::size_t db_size) {
  std::map<std::uint64_t, int> votes;
  for (const auto& row : compensated) {
    IdMatrix single{row};
    for (std::uint64_t id : candidate_set(single, db_size)) ++votes[id];
  }
  return {votes.begin(), votes.end()};
}

std::optional<double> sequence_score(const FloatMatrix& query, const ReferenceDb& db, std::uint64_t k) {
  const auto m = static_cast<std::uint64_t>(query.rows());
  if (m == 0 || k + m > db.size()) return std::nullopt;
  if (db.track_of(k) != db.track_of(k + m - 1)) return std::nullopt;
  const FloatMatrix& refs = db.fingerprints();
  double total = 0.0;
  for (Eigen::Index j = 0; j < query.rows(); ++j) {
    total += query.row(j).cast<double>().dot(refs.row(static_cast<Eigen::Index>(k) + j).cast<double>());
  }
  return total / static_cast<double>(m);
}

json MatchResult::to_json() const {
  json j = {{"track_id", track_id}, {"start_id", start_id}, {"start_segment", start_segment},
            {"start_ms", start_ms}, {"score", score},       {"candidates", candidates}};
  j["runner_up_margin"] = runner_up_margin ? json(*runner_up_margin) : json(nullptr);
  return j;
}

std::optional<MatchResult> identify_sequence(const FloatMatrix& query, const ReferenceDb& db,
                                             const IvfPqIndex& index, const IdentifyOptions& opts) {
  if (query.rows() == 0) throw std::invalid_argument("identify: empty query sequence");
  if (opts.topn < 1) throw std::invalid_argument("identify: topn must be >= 1");
  IdMatrix retrieved(static_cast<std::size_t>(query.rows()));
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    for (const auto& hit : index.search(row_span(query, i), opts.topn, opts.nprobe)) {
      retrieved[i].push_back(static_cast<std::int64_t>(hit.id));
    }
  }
  const auto candidates = candidate_set(offset_compensate(retrieved), db.size());

  std::optional<std::uint64_t> best_id;
  double best = -std::numeric_limits<double>::infinity();
  double second = -std::numeric_limits<double>::infinity();
  std::size_t scored = 0;
  // Candidates are ascending, so a strict comparison keeps the lower id on ties.
  for (std::uint64_t k : candidates) {
    const auto s = sequence_score(query, db, k);
    if (!s) continue;
    ++scored;
    if (*s > best) {
      second = best;
      best = *s;
      best_id = k;
    } else if (*s > second) {
      second = *s;
    }
  }
  if (!best_id) return std::nullopt;
  if (opts.min_score && best < *opts.min_score) return std::nullopt;

  MatchResult result;
  result.track_index = db.track_of(*best_id);
  result.track_id = db.tracks()[result.track_index].track_id;
  result.start_id = *best_id;
  result.start_segment = *best_id - db.tracks()[result.track_index].first_id;
  result.start_ms = static_cast<double>(result.start_segment) * db.spec().hop_s * 1000.0;
  result.score = best;
  if (scored > 1) result.runner_up_margin = best - second;
  result.candidates = scored;
  return result;
}

std::optional<MatchResult> identify(const WaveBuffer& query, const ReferenceDb& db, const IvfPqIndex& index,
                                    const Encoder<float>& encoder, const IdentifyOptions& opts,
                                    const MelConfig& mel) {
  if (query.size() < db.spec().window_samples(query.sample_rate)) {
    throw std::invalid_argument("identify: query shorter than one window");
  }
  return identify_sequence(fingerprint_track(query, encoder, db.spec(), mel), db, index, opts);
}

std::vector<EvalQuery> load_eval_list(const std::filesystem::path& list) {
  std::ifstream in(list);
  if (!in) throw std::runtime_error(list.string() + ": cannot open query list");
  std::vector<EvalQuery> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      EvalQuery q{rec.at("path").get<std::string>(), rec.at("track_id").get<std::string>(),
                  rec.at("start_ms").get<double>()};
      if (q.path.is_relative()) q.path = list.parent_path() / q.path;
      out.push_back(std::move(q));
    } catch (const std::exception& e) {
      throw std::runtime_error(list.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_eval_list(const std::filesystem::path& list, std::span<const EvalQuery> queries) {
  std::ofstream out(list, std::ios::trunc);
  if (!out) throw std::runtime_error(list.string() + ": cannot open for writing");
  for (const auto& q : queries) {
    out << json{{"path", q.path.string()}, {"track_id", q.track_id}, {"start_ms", q.start_ms}}.dump() << '\n';
  }
  if (!out) throw std::runtime_error(list.string() + ": write failed");
}

json EvalReport::to_json() const {
  return {{"total", total}, {"correct", correct}, {"top1_hit_rate", top1_hit_rate}, {"margin_ms", margin_ms}};
}

bool is_correct(const std::optional<MatchResult>& prediction, const EvalQuery& truth, double margin_ms) {
  if (!prediction || prediction->track_id != truth.track_id) return false;
  // Slack absorbs decimal representation of hop multiples.
  return std::abs(prediction->start_ms - truth.start_ms) <= margin_ms + 1e-6;
}

EvalReport score_predictions(std::span<const std::optional<MatchResult>> predictions,
                             std::span<const EvalQuery> truths, double margin_ms) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
  if (!(margin_ms >= 0.0)) throw std::invalid_argument("evaluate: margin_ms must be >= 0");
  EvalReport report;
  report.margin_ms = margin_ms;
  report.total = truths.size();
  for (std::size_t i = 0; i < truths.size(); ++i) report.correct += is_correct(predictions[i], truths[i], margin_ms);
  report.top1_hit_rate =
      report.total == 0 ? 0.0 : 100.0 * static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

Evaluation evaluate(std::span<const WaveBuffer> waves, std::span<const EvalQuery> truths, const ReferenceDb& db,
                    const IvfPqIndex& index, const Encoder<float>& encoder, const IdentifyOptions& opts,
                    double margin_ms, const MelConfig& mel) {
  if (waves.size() != truths.size()) throw std::invalid_argument("evaluate: wave and label counts differ");
  Evaluation ev;
  ev.predictions.reserve(waves.size());
  for (const auto& w : waves) ev.predictions.push_back(identify(w, db, index, encoder, opts, mel));
  ev.report = score_predictions(ev.predictions, truths, margin_ms);
  return ev;
}

}  // namespace gnnfp
