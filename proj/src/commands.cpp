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

#include "gnnfp/commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "gnnfp/parallel.hpp"
#include "gnnfp/synth.hpp"

namespace gnnfp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Named sub-seed streams.
enum SeedStream : std::uint64_t { kTrainSeed = 1, kIndexSeed = 2, kEncoderSeed = 3, kQuerySeed = 4 };

template <typename F>
void as_config_error(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

void RunConfig::finalize() {
  as_config_error([&] {
    segment.validate();
    mel.segment_samples = static_cast<int>(segment.window_samples(mel.sample_rate));
    mel.validate();
    augment.validate();
    encoder.input_height = mel.n_mels;
    encoder.input_width = mel.n_frames();
    encoder.seed = mix_seed(seed, kEncoderSeed);
    encoder.validate();
    train.seed = mix_seed(seed, kTrainSeed);
    train.validate();
    index.dim = encoder.embed_dim;
    index.seed = mix_seed(seed, kIndexSeed);
    index.validate();
    identify.nprobe = index.nprobe;
    if (identify.topn < 1) throw std::invalid_argument("topn must be >= 1");
    if (!(margin_ms >= 0.0)) throw std::invalid_argument("margin_ms must be >= 0");
  });
}

namespace {

struct Paths {
  std::string manifest, out, checkpoint, store, index, audio, queries, metrics, checkpoint_dir;
  std::string noise_manifest, rir_manifest;
};

struct SynthArgs {
  int n_tracks = 100;
  double duration_s = 10.0;
  int noise_clips = 8;
  int rirs = 8;
};

struct QueryGenArgs {
  int n_queries = 100;
  double query_s = 2.0;
  double snr_db = 20.0;
  bool aligned = false;
};

/// Shared pipeline knobs, present on every subcommand so that one config file
/// serves all of them.
struct Knobs {
  std::vector<int> stem_channels{32, 64};
  std::vector<int> stage_blocks{2, 2};
  std::vector<int> stage_channels{64, 128};
  std::string activation = "gelu";
  double min_score = std::numeric_limits<double>::quiet_NaN();
};

/// Appends "--key value..." for every line of each --config file whose key
/// was not given on the command line. Lists may be written as "8 16",
/// "8, 16" or "[8, 16]"; '#' starts a comment.
std::vector<std::string> expand_config_files(const std::vector<std::string>& args) {
  std::vector<std::string> files;
  std::set<std::string> given;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      files.push_back(args[++i]);
    } else if (a.rfind("--config=", 0) == 0) {
      files.push_back(a.substr(9));
    } else if (a.rfind("--", 0) == 0) {
      given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
    }
  }
  std::vector<std::string> out = args;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file + ": cannot open configuration file");
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      line = line.substr(0, line.find('#'));
      const auto eq = line.find('=');
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t\r");
        const auto e = v.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw ConfigError(file + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError(file + ":" + std::to_string(lineno) + ": empty key or value");
      if (given.count(key)) continue;
      given.insert(key);
      out.push_back("--" + key);
      for (char& ch : value) {
        if (ch == '[' || ch == ']' || ch == ',' || ch == '"') ch = ' ';
      }
      std::istringstream tokens(value);
      for (std::string t; tokens >> t;) out.push_back(t);
    }
  }
  return out;
}

void add_pipeline_options(CLI::App* app, RunConfig& c, Knobs& k) {
  app->add_option("--config", "Flat key = value file; command-line options take precedence");

  app->add_option("--seed", c.seed, "Global seed")->capture_default_str();
  app->add_option("--window_s", c.segment.window_s, "Segment length (s)")->capture_default_str();
  app->add_option("--hop_s", c.segment.hop_s, "Segment hop (s)")->capture_default_str();
  app->add_option("--n_fft", c.mel.n_fft)->capture_default_str();
  app->add_option("--mel_hop", c.mel.hop_length, "STFT hop (samples)")->capture_default_str();
  app->add_option("--n_mels", c.mel.n_mels)->capture_default_str();
  app->add_option("--f_min", c.mel.f_min)->capture_default_str();
  app->add_option("--f_max", c.mel.f_max)->capture_default_str();

  app->add_option("--offset_ms_max", c.augment.offset_ms_max)->capture_default_str();
  app->add_option("--snr_db_low", c.augment.snr_db_low)->capture_default_str();
  app->add_option("--snr_db_high", c.augment.snr_db_high)->capture_default_str();
  app->add_option("--reverb_prob", c.augment.reverb_prob)->capture_default_str();
  app->add_option("--noise_enabled", c.augment.noise_enabled)->capture_default_str();
  app->add_option("--anchor_offset", c.augment.anchor_offset)->capture_default_str();

  app->add_option("--stem_channels", k.stem_channels)->capture_default_str();
  app->add_option("--stage_blocks", k.stage_blocks)->capture_default_str();
  app->add_option("--stage_channels", k.stage_channels)->capture_default_str();
  app->add_option("--node_dim", c.encoder.node_dim)->capture_default_str();
  app->add_option("--k_neighbors", c.encoder.k)->capture_default_str();
  app->add_option("--embed_dim", c.encoder.embed_dim)->capture_default_str();
  app->add_option("--ffn_expansion", c.encoder.ffn_expansion)->capture_default_str();
  app->add_option("--activation", k.activation)->check(CLI::IsMember({"gelu", "relu"}))->capture_default_str();
  app->add_option("--batch_norm", c.encoder.batch_norm)->capture_default_str();
  app->add_option("--knn_after_input_fc", c.encoder.knn_after_input_fc)->capture_default_str();

  app->add_option("--tau", c.train.tau)->capture_default_str();
  app->add_option("--batch_size", c.train.batch_size)->capture_default_str();
  app->add_option("--epochs", c.train.epochs)->capture_default_str();
  app->add_option("--lr", c.train.base_lr)->capture_default_str();
  app->add_option("--samples_per_track", c.train.samples_per_track)->capture_default_str();

  app->add_option("--n_centroids", c.index.n_centroids)->capture_default_str();
  app->add_option("--m_subspaces", c.index.m_subspaces)->capture_default_str();
  app->add_option("--bits_per_code", c.index.bits_per_code)->capture_default_str();
  app->add_option("--nprobe", c.index.nprobe)->capture_default_str();
  app->add_option("--kmeans_iters", c.index.kmeans_iters)->capture_default_str();
  app->add_option("--max_points_per_centroid", c.index.max_points_per_centroid)->capture_default_str();

  app->add_option("--topn", c.identify.topn, "ANN hits per query segment")->capture_default_str();
  app->add_option("--min_score", k.min_score, "Reject matches scoring below this");
  app->add_option("--margin_ms", c.margin_ms, "Evaluation time margin")->capture_default_str();
}

void apply_knobs(RunConfig& c, const Knobs& k) {
  c.encoder.stem_channels = k.stem_channels;
  c.encoder.stem_strides.assign(k.stem_channels.size(), {2, 2});
  if (k.stage_blocks.size() != k.stage_channels.size()) {
    throw ConfigError("stage_blocks and stage_channels must have the same length");
  }
  c.encoder.stages.clear();
  for (std::size_t s = 0; s < k.stage_blocks.size(); ++s) {
    // Downsample between consecutive stages.
    c.encoder.stages.push_back({k.stage_blocks[s], k.stage_channels[s], s + 1 < k.stage_blocks.size()});
  }
  c.encoder.activation = k.activation == "relu" ? nn::Activation::kRelu : nn::Activation::kGelu;
  if (!std::isnan(k.min_score)) c.identify.min_score = k.min_score;
  c.finalize();
}

class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err), t0_(std::chrono::steady_clock::now()) {}
  template <typename... A>
  void operator()(const A&... parts) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    const auto flags = err_.flags();
    const auto precision = err_.precision();
    err_ << '[' << std::fixed << std::setprecision(1) << t << "s] ";
    err_.flags(flags);
    err_.precision(precision);
    (err_ << ... << parts) << '\n';
  }

 private:
  std::ostream& err_;
  std::chrono::steady_clock::time_point t0_;
};

std::vector<fs::path> read_path_list(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error(manifest.string() + ": cannot open manifest");
  std::vector<fs::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fs::path p(line);
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(p);
  }
  if (paths.empty()) throw std::runtime_error(manifest.string() + ": manifest lists no audio files");
  return paths;
}

const AudioBank* optional_bank(const std::string& manifest, std::optional<AudioBank>& storage) {
  if (manifest.empty()) return nullptr;
  storage = AudioBank::from_manifest(manifest);
  if (storage->empty()) throw std::runtime_error(manifest + ": manifest lists no audio files");
  return &*storage;
}

Encoder<float> load_model(const std::string& path, const RunConfig& c) {
  Encoder<float> encoder = load_checkpoint(path);
  const auto& ec = encoder.config();
  if (ec.input_height != c.encoder.input_height || ec.input_width != c.encoder.input_width) {
    throw ConfigError("checkpoint expects " + std::to_string(ec.input_height) + "x" +
                      std::to_string(ec.input_width) + " features but the feature settings give " +
                      std::to_string(c.encoder.input_height) + "x" + std::to_string(c.encoder.input_width));
  }
  return encoder;
}

void require_same_hop(const ReferenceDb& db, const RunConfig& c) {
  if (db.spec().hop_s != c.segment.hop_s || db.spec().window_s != c.segment.window_s) {
    throw ConfigError("reference store uses window " + std::to_string(db.spec().window_s) + " s / hop " +
                      std::to_string(db.spec().hop_s) + " s, configuration has " +
                      std::to_string(c.segment.window_s) + " s / " + std::to_string(c.segment.hop_s) + " s");
  }
}

int cmd_synth(const RunConfig& c, const Paths& p, const SynthArgs& a, Logger& log) {
  CorpusConfig cc;
  cc.n_tracks = a.n_tracks;
  cc.duration_s = a.duration_s;
  cc.seed = c.seed;
  cc.noise_clips = a.noise_clips;
  cc.rirs = a.rirs;
  CorpusLayout layout;
  as_config_error([&] { layout = write_corpus(p.out, cc); });
  log("wrote ", layout.tracks.size(), " tracks to ", p.out);
  return kExitOk;
}

int cmd_train(const RunConfig& c, const Paths& p, Logger& log) {
  const auto bank = AudioBank::from_manifest(p.manifest);
  if (bank.empty()) throw std::runtime_error(p.manifest + ": manifest lists no audio files");
  std::optional<AudioBank> noise, rirs;
  FitOptions options;
  options.segment = c.segment;
  options.mel = c.mel;
  options.augment = c.augment;
  options.banks = {optional_bank(p.noise_manifest, noise), optional_bank(p.rir_manifest, rirs)};
  // Without a bank the matching augmentation is switched off rather than failing mid-run.
  if (!options.banks.noise && options.augment.noise_enabled) {
    options.augment.noise_enabled = false;
    log("no --noise_manifest: noise mixing disabled");
  }
  if (!options.banks.rirs && options.augment.reverb_prob > 0.0) {
    options.augment.reverb_prob = 0.0;
    log("no --rir_manifest: reverberation disabled");
  }
  if (!p.checkpoint_dir.empty()) options.checkpoint_dir = fs::path(p.checkpoint_dir);
  const fs::path metrics = p.metrics.empty() ? fs::path(p.out + ".metrics.csv") : fs::path(p.metrics);
  fs::remove(metrics);
  options.metrics_csv = metrics;
  options.on_epoch = [&](const EpochStats& s) {
    log("epoch ", s.epoch, "/", c.train.epochs, " steps ", s.steps, " loss ", s.mean_loss, " (", s.seconds, " s)");
  };

  Encoder<float> encoder(c.encoder);
  log("training on ", bank.size(), " tracks, ", encoder.parameter_count(), " parameters");
  fit(bank.clips, encoder, c.train, options);
  const json extra = {{"mel", {{"n_fft", c.mel.n_fft}, {"hop_length", c.mel.hop_length}, {"n_mels", c.mel.n_mels}}},
                      {"window_s", c.segment.window_s},
                      {"hop_s", c.segment.hop_s}};
  save_checkpoint(p.out, encoder, extra);
  log("saved ", p.out);
  return kExitOk;
}

int cmd_fingerprint(const RunConfig& c, const Paths& p, Logger& log) {
  const auto paths = read_path_list(p.manifest);
  const Encoder<float> encoder = load_model(p.checkpoint, c);
  ReferenceDb db(c.segment, encoder.config().embed_dim);
  for (const auto& path : paths) {
    const WaveBuffer wave = load_audio(path);
    if (wave.size() < c.segment.window_samples(wave.sample_rate)) {
      throw std::runtime_error(path.string() + ": shorter than one window");
    }
    db.add_track(path.stem().string(), path.string(), fingerprint_track(wave, encoder, c.segment, c.mel));
  }
  db.save(p.out, manifest_path_for(p.out));
  log("fingerprinted ", db.tracks().size(), " tracks, ", db.size(), " segments");
  return kExitOk;
}

int cmd_index_build(const RunConfig& c, const Paths& p, Logger& log) {
  const ReferenceDb db = ReferenceDb::load(p.store, manifest_path_for(p.store));
  IndexConfig cfg = c.index;
  cfg.dim = db.dim();
  const int needed = std::max(cfg.n_centroids, cfg.codebook_size());
  if (db.size() < static_cast<std::size_t>(needed)) {
    throw ConfigError("index-build needs at least " + std::to_string(needed) +
                      " vectors (n_centroids and 2^bits_per_code) but the store holds " +
                      std::to_string(db.size()) + "; fingerprint more audio or lower --n_centroids / --bits_per_code");
  }
  IvfPqIndex index(cfg);
  index.train(db.fingerprints());
  std::vector<std::uint64_t> ids(db.size());
  std::iota(ids.begin(), ids.end(), 0);
  index.add(db.fingerprints(), ids);
  index.save(p.out);
  log("indexed ", index.size(), " vectors in ", cfg.n_centroids, " lists");
  return kExitOk;
}

int cmd_query(const RunConfig& c, const Paths& p, std::ostream& out) {
  const ReferenceDb db = ReferenceDb::load(p.store, manifest_path_for(p.store));
  require_same_hop(db, c);
  const IvfPqIndex index = IvfPqIndex::load(p.index);
  const Encoder<float> encoder = load_model(p.checkpoint, c);
  const WaveBuffer wave = load_audio(p.audio);
  if (wave.size() < db.spec().window_samples(wave.sample_rate)) {
    throw std::runtime_error(p.audio + ": shorter than one window");
  }
  const auto match = identify(wave, db, index, encoder, c.identify, c.mel);
  out << (match ? json{{"match", match->to_json()}} : json{{"match", nullptr}}).dump() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const Paths& p, std::ostream& out, Logger& log) {
  const auto queries = load_eval_list(p.queries);
  if (queries.empty()) throw std::runtime_error(p.queries + ": no queries");
  const ReferenceDb db = ReferenceDb::load(p.store, manifest_path_for(p.store));
  require_same_hop(db, c);
  const IvfPqIndex index = IvfPqIndex::load(p.index);
  const Encoder<float> encoder = load_model(p.checkpoint, c);
  std::vector<WaveBuffer> waves;
  waves.reserve(queries.size());
  for (const auto& q : queries) waves.push_back(load_audio(q.path));
  const auto ev = evaluate(waves, queries, db, index, encoder, c.identify, c.margin_ms, c.mel);
  log("evaluated ", ev.report.total, " queries");
  out << ev.report.to_json().dump() << '\n';
  return kExitOk;
}

int cmd_make_queries(const RunConfig& c, const Paths& p, const QueryGenArgs& a, Logger& log) {
  if (a.n_queries < 1 || !(a.query_s >= c.segment.window_s)) {
    throw ConfigError("make-queries needs n_queries >= 1 and query_s >= window_s");
  }
  const auto paths = read_path_list(p.manifest);
  std::optional<AudioBank> noise_storage;
  const AudioBank* noise = optional_bank(p.noise_manifest, noise_storage);
  fs::create_directories(p.out);

  Rng rng(mix_seed(c.seed, kQuerySeed));
  const auto len = static_cast<std::size_t>(std::llround(a.query_s * kCanonicalRate));
  const std::size_t hop = c.segment.hop_samples(kCanonicalRate);
  std::map<std::size_t, WaveBuffer> cache;
  std::vector<EvalQuery> list;
  for (int q = 0; q < a.n_queries; ++q) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, paths.size() - 1)(rng);
    if (!cache.contains(t)) cache[t] = load_audio(paths[t]);
    const WaveBuffer& track = cache[t];
    if (track.size() < len) throw std::runtime_error(paths[t].string() + ": shorter than a query");
    std::size_t start = std::uniform_int_distribution<std::size_t>(0, track.size() - len)(rng);
    if (a.aligned) start -= start % hop;
    WaveBuffer wave = slice(track, start, len);
    if (noise) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(0, noise->size() - 1)(rng);
      wave = mix_noise(wave, noise->clips[n], a.snr_db, rng).mixed;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "query_%04d.wav", q);
    write_wav(fs::path(p.out) / name, wave);
    list.push_back({name, paths[t].stem().string(), 1000.0 * static_cast<double>(start) / kCanonicalRate});
  }
  save_eval_list(fs::path(p.out) / "queries.jsonl", list);
  log("wrote ", list.size(), " queries to ", p.out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph neural network audio fingerprinting"};
  app.require_subcommand(1);
  RunConfig cfg;
  Knobs knobs;
  Paths paths;
  SynthArgs synth;
  QueryGenArgs qgen;

  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus with noise and room-response banks");
  s->add_option("--out", paths.out, "Output directory")->required();
  s->add_option("--n_tracks", synth.n_tracks)->capture_default_str();
  s->add_option("--duration_s", synth.duration_s)->capture_default_str();
  s->add_option("--noise_clips", synth.noise_clips)->capture_default_str();
  s->add_option("--rirs", synth.rirs)->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train an encoder");
  tr->add_option("--manifest", paths.manifest, "Track list, one path per line")->required();
  tr->add_option("--out", paths.out, "Output checkpoint")->required();
  tr->add_option("--metrics", paths.metrics, "Metrics CSV (default <out>.metrics.csv)");
  tr->add_option("--checkpoint_dir", paths.checkpoint_dir, "Per-epoch last/best checkpoints");
  tr->add_option("--noise_manifest", paths.noise_manifest, "Noise clips for augmentation");
  tr->add_option("--rir_manifest", paths.rir_manifest, "Room responses for augmentation");

  auto* fp = app.add_subcommand("fingerprint", "Fingerprint reference tracks");
  fp->add_option("--manifest", paths.manifest)->required();
  fp->add_option("--checkpoint", paths.checkpoint)->required();
  fp->add_option("--out", paths.out, "Fingerprint store (manifest written to <out>.jsonl)")->required();

  auto* ib = app.add_subcommand("index-build", "Build an IVF-PQ index over a fingerprint store");
  ib->add_option("--store", paths.store)->required();
  ib->add_option("--out", paths.out)->required();

  auto* q = app.add_subcommand("query", "Identify one audio file");
  q->add_option("--audio", paths.audio)->required();
  q->add_option("--store", paths.store)->required();
  q->add_option("--index", paths.index)->required();
  q->add_option("--checkpoint", paths.checkpoint)->required();

  auto* ev = app.add_subcommand("eval", "Top-1 hit rate over a labelled query list");
  ev->add_option("--queries", paths.queries)->required();
  ev->add_option("--store", paths.store)->required();
  ev->add_option("--index", paths.index)->required();
  ev->add_option("--checkpoint", paths.checkpoint)->required();

  auto* mq = app.add_subcommand("make-queries", "Cut labelled (optionally noisy) excerpts from tracks");
  mq->add_option("--manifest", paths.manifest)->required();
  mq->add_option("--out", paths.out, "Output directory (queries.jsonl inside)")->required();
  mq->add_option("--noise_manifest", paths.noise_manifest);
  mq->add_option("--n_queries", qgen.n_queries)->capture_default_str();
  mq->add_option("--query_s", qgen.query_s)->capture_default_str();
  mq->add_option("--snr_db", qgen.snr_db)->capture_default_str();
  mq->add_flag("--aligned", qgen.aligned, "Snap starts to the segment hop");

  for (auto* sub : {s, tr, fp, ib, q, ev, mq}) add_pipeline_options(sub, cfg, knobs);

  std::vector<std::string> expanded;
  try {
    expanded = expand_config_files(args);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  std::vector<const char*> argv{"gnnfp"};
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Logger log(err);
  try {
    apply_knobs(cfg, knobs);
    if (s->parsed()) return cmd_synth(cfg, paths, synth, log);
    if (tr->parsed()) return cmd_train(cfg, paths, log);
    if (fp->parsed()) return cmd_fingerprint(cfg, paths, log);
    if (ib->parsed()) return cmd_index_build(cfg, paths, log);
    if (q->parsed()) return cmd_query(cfg, paths, out);
    if (ev->parsed()) return cmd_eval(cfg, paths, out, log);
    if (mq->parsed()) return cmd_make_queries(cfg, paths, qgen, log);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace gnnfp
