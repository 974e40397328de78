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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `--only 1,5` restricts the run.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "gnnfp/augment.hpp"
#include "gnnfp/parallel.hpp"
#include "gnnfp/retrieval.hpp"
#include "gnnfp/synth.hpp"
#include "oracles.hpp"

using namespace gnnfp;
using gnnfp::test::Mat;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- 1 ----------------------------------------------------------------------

Outcome nt_xent_oracle_equivalence() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Mat<double> z = test::random_matrix(8, 16, 1000 + s);
    worst = std::max(worst, std::abs(nt_xent_loss(z, 0.05).loss - test::nt_xent_oracle(z, 0.05)));
  }
  bool zero = true;
  for (std::uint64_t s = 0; s < 10; ++s) zero = zero && nt_xent_loss(test::random_matrix(2, 16, s), 0.05).loss == 0.0;
  return {worst < 1e-6 && zero, "max |loss - oracle| " + fmt("%.3g", worst) + (zero ? ", N=1 loss 0" : ", N=1 loss nonzero")};
}

// --- 2 ----------------------------------------------------------------------

Outcome gradient_checks() {
  double worst = 0.0;
  std::string where;
  auto take = [&](const char* name, const test::GradCheck& r) {
    if (where.empty() || r.max_rel > worst) {
      worst = r.max_rel;
      where = std::string(name) + " " + r.worst;
    }
  };
  for (std::uint64_t s = 1; s <= 3; ++s) {
    take("projection", test::check_projection(s));
    take("graph_conv", test::check_graph_conv(s));
    take("grapher_block", test::check_grapher_block(s));
    take("ffn_block", test::check_ffn_block(s));
    take("pool_and_project", test::check_pool_project(s));
    take("nt_xent", test::check_nt_xent(s, 3, 8));
  }
  return {worst < 1e-3, "max relative error " + fmt("%.3g", worst) + " (" + where + ")"};
}

// --- 3 ----------------------------------------------------------------------

Outcome knn_exactness() {
  std::mt19937_64 rng(3);
  int bad = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const int n = std::uniform_int_distribution<int>(2, 256)(rng);
    const int d = std::uniform_int_distribution<int>(1, 32)(rng);
    const int k = std::uniform_int_distribution<int>(1, std::min(16, n - 1))(rng);
    Mat<double> x = test::random_matrix(n, d, rng());
    if (inst % 3 == 0) x = x.array().round().matrix();  // integer grid: many exact ties
    const KnnGraph g = build_knn_graph(x, k);
    const auto oracle = test::knn_oracle(x, k);
    for (int i = 0; i < n; ++i) {
      if (std::vector<int>(g.of(i).begin(), g.of(i).end()) != oracle[i]) {
        ++bad;
        break;
      }
    }
  }
  return {bad == 0, std::to_string(500 - bad) + "/500 instances match"};
}

// --- 4 ----------------------------------------------------------------------

Outcome graph_conv_invariants() {
  int constant_ok = 0, perm_ok = 0;
  std::mt19937_64 rng(4);
  for (int inst = 0; inst < 50; ++inst) {
    const int n = std::uniform_int_distribution<int>(4, 128)(rng);
    const int d = std::uniform_int_distribution<int>(1, 32)(rng);
    const int k = std::uniform_int_distribution<int>(1, std::min(9, n - 1))(rng);
    const double v = std::normal_distribution<double>(0.0, 3.0)(rng);
    const Mat<double> x = Mat<double>::Constant(n, d, v);
    const std::vector<KnnGraph> g{build_knn_graph(x, k)};
    const Mat<double> agg = max_relative_aggregate(x, std::span<const KnnGraph>(g));
    constant_ok += agg.rightCols(d).isZero(0.0) && agg.leftCols(d) == x;
    perm_ok += test::graph_conv_permutation_equivariant(rng(), n, d, k);
  }
  return {constant_ok == 50 && perm_ok == 50, "constant field " + std::to_string(constant_ok) +
                                                   "/50, bit-wise permutation equivariance " +
                                                   std::to_string(perm_ok) + "/50"};
}

// --- 5 and 6 ----------------------------------------------------------------

struct IndexFixture {
  FloatMatrix base;
  FloatMatrix queries;
  IvfPqIndex index;
};

/// 10,000 unit vectors in 64 Gaussian clusters; queries are noisy copies of
/// database vectors, the fingerprint lookup situation.
IndexFixture make_index_fixture() {
  IndexFixture f;
  f.base = test::clustered_unit_vectors(10000, 128, 64, 0.1, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g(0.0f, 0.02f);
  std::uniform_int_distribution<int> pick(0, 9999);
  f.queries.resize(500, 128);
  for (int i = 0; i < 500; ++i) {
    const int src = pick(rng);
    for (int d = 0; d < 128; ++d) f.queries(i, d) = f.base(src, d) + g(rng);
    f.queries.row(i).normalize();
  }
  IndexConfig c;
  c.seed = 7;
  f.index = IvfPqIndex(c);
  f.index.train(f.base);
  std::vector<std::uint64_t> ids(10000);
  std::iota(ids.begin(), ids.end(), 0);
  f.index.add(f.base, ids);
  return f;
}

Outcome ivf_pq_recall(const IndexFixture& f) {
  double recall[2] = {0.0, 0.0};
  const int probes[2] = {64, 256};
  for (int i = 0; i < f.queries.rows(); ++i) {
    const std::uint64_t truth = brute_force_search(row_span(f.queries, i), f.base, 1)[0].id;
    for (int p = 0; p < 2; ++p) recall[p] += f.index.search(row_span(f.queries, i), 1, probes[p])[0].id == truth;
  }
  for (double& r : recall) r /= static_cast<double>(f.queries.rows());
  bool monotone = true;
  auto check = [&](const std::vector<double>& obj) {
    for (std::size_t i = 1; i < obj.size(); ++i) monotone = monotone && obj[i] <= obj[i - 1];
  };
  check(f.index.train_stats().coarse_objective);
  for (const auto& o : f.index.train_stats().pq_objective) check(o);
  return {recall[0] >= 0.95 && recall[1] >= 0.99 && monotone,
          "recall@1 " + fmt("%.3f", recall[0]) + " at nprobe 64, " + fmt("%.3f", recall[1]) +
              " at nprobe 256; objectives " + (monotone ? "non-increasing" : "INCREASED")};
}

Outcome index_serialization(const IndexFixture& f) {
  test::TempDir dir("acceptance_index");
  f.index.save(dir / "i.gfpi");
  const IvfPqIndex back = IvfPqIndex::load(dir / "i.gfpi");
  int same = 0;
  for (int i = 0; i < 100; ++i) same += back.search(row_span(f.queries, i), 20, 8) == f.index.search(row_span(f.queries, i), 20, 8);
  return {same == 100, std::to_string(same) + "/100 identical top-20 lists"};
}

// --- 7 ----------------------------------------------------------------------

struct Reference {
  std::vector<WaveBuffer> tracks;
  ReferenceDb db;
  IvfPqIndex index;
};

Reference build_reference(std::vector<WaveBuffer> tracks, const Encoder<float>& enc, std::uint64_t seed) {
  Reference r{std::move(tracks), ReferenceDb({}, enc.config().embed_dim), IvfPqIndex()};
  for (std::size_t t = 0; t < r.tracks.size(); ++t) {
    r.db.add_track("track_" + std::to_string(t), "", fingerprint_track(r.tracks[t], enc, {}));
  }
  IndexConfig c;
  c.dim = enc.config().embed_dim;
  c.seed = seed;
  r.index = IvfPqIndex(c);
  r.index.train(r.db.fingerprints());
  std::vector<std::uint64_t> ids(r.db.size());
  std::iota(ids.begin(), ids.end(), 0);
  r.index.add(r.db.fingerprints(), ids);
  return r;
}

struct QuerySet {
  std::vector<WaveBuffer> waves;
  std::vector<EvalQuery> truths;
};

/// 2 s excerpts; hop-aligned and clean, or random-start with noise at `snr_db`.
QuerySet make_queries(const std::vector<WaveBuffer>& tracks, int n, bool aligned, const AudioBank* noise,
                      double snr_db, std::uint64_t seed) {
  QuerySet q;
  Rng rng(seed);
  const std::size_t len = 2 * kCanonicalRate;
  const std::size_t hop = SegmentSpec{}.hop_samples(kCanonicalRate);
  for (int i = 0; i < n; ++i) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, tracks.size() - 1)(rng);
    std::size_t start = std::uniform_int_distribution<std::size_t>(0, tracks[t].size() - len)(rng);
    if (aligned) start -= start % hop;
    WaveBuffer w = slice(tracks[t], start, len);
    if (noise) {
      const std::size_t c = std::uniform_int_distribution<std::size_t>(0, noise->size() - 1)(rng);
      w = mix_noise(w, noise->clips[c], snr_db, rng).mixed;
    }
    q.waves.push_back(std::move(w));
    q.truths.push_back({"", "track_" + std::to_string(t), 1000.0 * static_cast<double>(start) / kCanonicalRate});
  }
  return q;
}

Outcome clean_self_retrieval() {
  EncoderConfig ec;
  ec.seed = 70;
  const Encoder<float> enc(ec);
  const Reference ref = build_reference(synth_tracks(100, 10.0, 71), enc, 72);
  const QuerySet q = make_queries(ref.tracks, 50, true, nullptr, 0.0, 73);
  const Evaluation e = evaluate(q.waves, q.truths, ref.db, ref.index, enc, {}, 50.0);
  return {e.report.correct == 50, std::to_string(e.report.correct) + "/50 correct, top-1 " +
                                      fmt("%.1f%%", e.report.top1_hit_rate) + " over " +
                                      std::to_string(ref.db.size()) + " reference segments"};
}

// --- 8 and 10 ---------------------------------------------------------------

struct NoisyRun {
  std::map<double, EvalReport> reports;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  double final_loss = 0.0;
};

constexpr int kEpochs = 50;

NoisyRun desk_scale_noisy_retrieval() {
  const auto t0 = Clock::now();
  const std::uint64_t seed = 80;
  auto tracks = synth_tracks(100, 10.0, seed);
  AudioBank train_noise, test_noise, rirs;
  {
    auto a = synth_noise_bank(NoiseSplit::kTrain, 8, 10.0, seed);
    auto b = synth_noise_bank(NoiseSplit::kTest, 8, 10.0, seed);
    auto c = synth_rir_bank(8, seed);
    for (std::size_t i = 0; i < a.size(); ++i) train_noise.add("train_" + std::to_string(i), std::move(a[i]));
    for (std::size_t i = 0; i < b.size(); ++i) test_noise.add("test_" + std::to_string(i), std::move(b[i]));
    for (std::size_t i = 0; i < c.size(); ++i) rirs.add("rir_" + std::to_string(i), std::move(c[i]));
  }

  EncoderConfig ec;
  ec.seed = mix_seed(seed, 3);
  Encoder<float> enc(ec);
  TrainConfig tc;
  tc.epochs = kEpochs;
  tc.batch_size = 128;
  tc.samples_per_track = 8;
  tc.seed = mix_seed(seed, 1);
  FitOptions opt;
  opt.banks = {&train_noise, &rirs};
  opt.on_epoch = [](const EpochStats& s) {
    std::cerr << "  criterion 8: epoch " << s.epoch << "/" << kEpochs << " loss " << s.mean_loss << '\n';
  };
  NoisyRun run;
  const FitResult fr = fit(tracks, enc, tc, opt);
  run.final_loss = fr.epochs.back().mean_loss;
  run.train_seconds = seconds_since(t0);

  const Reference ref = build_reference(std::move(tracks), enc, mix_seed(seed, 2));
  const QuerySet q = make_queries(ref.tracks, 100, false, &test_noise, 20.0, mix_seed(seed, 4));
  IdentifyOptions io;
  io.nprobe = 32;
  const Evaluation e = evaluate(q.waves, q.truths, ref.db, ref.index, enc, io, 50.0);
  for (double margin : {50.0, 100.0, 150.0, 200.0, 250.0}) {
    run.reports[margin] = score_predictions(e.predictions, q.truths, margin);
  }
  run.total_seconds = seconds_since(t0);
  return run;
}

// --- 9 ----------------------------------------------------------------------

Outcome offset_compensation() {
  FloatMatrix ref = test::random_matrix<float>(400, 64, 90);
  ref.rowwise().normalize();
  ReferenceDb db({}, 64);
  db.add_track("a", "", ref.topRows(200));
  db.add_track("b", "", ref.bottomRows(200));
  IndexConfig c;
  c.dim = 64;
  c.n_centroids = 16;
  c.seed = 91;
  IvfPqIndex index(c);
  index.train(db.fingerprints());
  std::vector<std::uint64_t> ids(db.size());
  std::iota(ids.begin(), ids.end(), 0);
  index.add(db.fingerprints(), ids);

  // The query truly starts at reference id 100 (10 segments, mild noise).
  FloatMatrix q = ref.middleRows(100, 10) + 0.05f * test::random_matrix<float>(10, 64, 92);
  q.rowwise().normalize();
  IdMatrix retrieved;
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<std::int64_t> row;
    for (const auto& h : index.search(row_span(q, i), 20, 16)) row.push_back(static_cast<std::int64_t>(h.id));
    retrieved.push_back(row);
  }
  const auto votes = vote_counts(offset_compensate(retrieved), db.size());
  int top = -1, second = -1;
  std::uint64_t top_id = 0;
  for (const auto& [id, n] : votes) {
    if (n > top) {
      second = top;
      top = n;
      top_id = id;
    } else if (n > second) {
      second = n;
    }
  }
  IdentifyOptions io;
  io.nprobe = 16;
  const auto m = identify_sequence(q, db, index, io);
  const bool ok = top_id == 100 && top > second && m && m->start_id == 100;
  return {ok, "votes for id " + std::to_string(top_id) + ": " + std::to_string(top) + " (runner-up " +
                  std::to_string(std::max(second, 0)) + "), identify start id " +
                  (m ? std::to_string(m->start_id) : std::string("none"))};
}

void report(int id, const char* name, const Outcome& o, double secs, double limit_s, int& failures) {
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool pass = o.pass && in_time;
  failures += !pass;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << " ["
            << fmt("%.1f", secs) << " s" << (in_time ? "" : ", over time limit") << "]" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  int failures = 0;

  auto timed = [&](int id, const char* name, double limit_s, auto&& fn) {
    if (!want(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, seconds_since(t0), limit_s, failures);
  };

  timed(1, "NT-Xent oracle equivalence", 5.0, nt_xent_oracle_equivalence);
  timed(2, "gradient checks", 60.0, gradient_checks);
  timed(3, "k-NN exactness", 30.0, knn_exactness);
  timed(4, "GraphConv invariants", 0.0, graph_conv_invariants);

  if (want(5) || want(6)) {
    const auto t0 = Clock::now();
    std::optional<IndexFixture> f;
    try {
      f = make_index_fixture();
    } catch (const std::exception& e) {
      std::cerr << "index fixture failed: " << e.what() << '\n';
    }
    const double build = seconds_since(t0);
    timed(5, "IVF-PQ recall", 120.0 - build, [&] { return f ? ivf_pq_recall(*f) : Outcome{false, "no index"}; });
    timed(6, "index serialization", 0.0, [&] { return f ? index_serialization(*f) : Outcome{false, "no index"}; });
  }

  timed(7, "clean self-retrieval", 300.0, clean_self_retrieval);
  timed(9, "offset compensation", 0.0, offset_compensation);

  if (want(8) || want(10)) {
    std::optional<NoisyRun> run;
    std::string error;
    try {
      run = desk_scale_noisy_retrieval();
    } catch (const std::exception& e) {
      error = e.what();
    }
    if (want(8)) {
      Outcome o{false, "exception: " + error};
      if (run) {
        const EvalReport& r = run->reports.at(50.0);
        o = {r.top1_hit_rate >= 80.0, std::to_string(r.correct) + "/" + std::to_string(r.total) +
                                          " correct, top-1 " + fmt("%.1f%%", r.top1_hit_rate) +
                                          " at +-50 ms after " + std::to_string(kEpochs) +
                                          " epochs (final loss " + fmt("%.4f", run->final_loss) +
                                          ", training " + fmt("%.0f s", run->train_seconds) + ")"};
      }
      report(8, "desk-scale noisy retrieval", o, run ? run->total_seconds : 0.0, 45.0 * 60.0, failures);
    }
    if (want(10)) {
      Outcome o{false, "exception: " + error};
      if (run) {
        bool monotone = true;
        double prev = -1.0;
        std::string trace;
        for (const auto& [margin, r] : run->reports) {
          monotone = monotone && r.top1_hit_rate >= prev;
          prev = r.top1_hit_rate;
          trace += (trace.empty() ? "" : ", ") + fmt("%.0f ms ", margin) + fmt("%.1f%%", r.top1_hit_rate);
        }
        o = {monotone, trace};
      }
      report(10, "granularity monotonicity", o, 0.0, 0.0, failures);
    }
  }

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
