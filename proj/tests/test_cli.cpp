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

#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gnnfp/audio.hpp"
#include "gnnfp/commands.hpp"
#include "gnnfp/encoder.hpp"
#include "gnnfp/synth.hpp"
#include "support.hpp"

using namespace gnnfp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// A small encoder and index so that the whole pipeline runs in seconds.
const std::vector<std::string> kSmall = {
    "--stem_channels", "8",  "16", "--stage_blocks", "1",  "1",  "--stage_channels", "16",
    "32",              "--node_dim", "16", "--embed_dim", "32", "--n_centroids", "8",  "--m_subspaces",
    "4",               "--bits_per_code", "4", "--seed", "5"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

/// Corpus of 8 tracks of 3 s, written once per process.
const fs::path& corpus() {
  static test::TempDir dir("cli_corpus");
  static const bool done = [] {
    const Run r = cli({"synth", "--out", dir.path().string(), "--n_tracks", "8", "--duration_s", "3",
                       "--noise_clips", "2", "--rirs", "2", "--seed", "3"});
    REQUIRE(r.code == kExitOk);
    return true;
  }();
  (void)done;
  return dir.path();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth writes distinct reproducible tracks") {
    test::TempDir a("synth_a"), b("synth_b");
    for (auto* d : {&a, &b}) {
      CHECK(cli({"synth", "--out", d->path().string(), "--n_tracks", "10", "--duration_s", "2", "--noise_clips", "1",
                 "--rirs", "1", "--seed", "11"})
                .code == kExitOk);
    }
    CHECK(line_count(a / "tracks.txt") == 10);
    std::vector<WaveBuffer> waves;
    for (int i = 0; i < 10; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "tracks/track_%04d.wav", i);
      REQUIRE(fs::exists(a / name));
      CHECK(slurp(a / name) == slurp(b / name));
      waves.push_back(read_wav(a / name));
    }
    for (int i = 0; i < 10; ++i) {
      for (int j = i + 1; j < 10; ++j) CHECK(std::abs(correlation(waves[i].samples, waves[j].samples)) < 0.2);
    }
  }

  TEST_CASE("usage errors exit with 2") {
    CHECK(cli({}).code == kExitConfig);
    CHECK(cli({"train"}).code == kExitConfig);
    CHECK(cli({"bogus"}).code == kExitConfig);
    CHECK(cli({"train", "--manifest", "m", "--out", "o", "--tau", "-1"}).code == kExitConfig);
  }

  TEST_CASE("train reports data errors with 3") {
    test::TempDir dir("train_err");
    const Run r = cli({"train", "--manifest", (dir / "missing.txt").string(), "--out", (dir / "m.gfpm").string()});
    CHECK(r.code == kExitData);
    CHECK_FALSE(r.err.empty());
  }

  TEST_CASE("train smoke run and determinism") {
    test::TempDir dir("train");
    const std::string manifest = (corpus() / "tracks.txt").string();
    for (const char* tag : {"a", "b"}) {
      const Run r = cli(with_small({"train", "--manifest", manifest, "--out", (dir / (std::string(tag) + ".gfpm")).string(),
                                    "--epochs", "1", "--batch_size", "4", "--noise_manifest",
                                    (corpus() / "noise_train.txt").string(), "--rir_manifest",
                                    (corpus() / "rirs.txt").string()}));
      INFO(r.err);
      REQUIRE(r.code == kExitOk);
    }
    CHECK(fs::exists(dir / "a.gfpm"));
    const std::string metrics = slurp(dir / "a.gfpm.metrics.csv");
    CHECK(metrics.rfind("epoch,step,lr,loss", 0) == 0);
    CHECK(line_count(dir / "a.gfpm.metrics.csv") == 3);  // header plus 2 steps
    CHECK(metrics == slurp(dir / "b.gfpm.metrics.csv"));
  }

  TEST_CASE("config file overrides defaults") {
    test::TempDir dir("config");
    {
      std::ofstream cfg(dir / "run.ini");
      cfg << "epochs = 2\nbatch_size = 8\nseed = 5\n";
    }
    const Run r = cli(with_small({"train", "--config", (dir / "run.ini").string(), "--manifest",
                                  (corpus() / "tracks.txt").string(), "--out", (dir / "m.gfpm").string()}));
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    CHECK(line_count(dir / "m.gfpm.metrics.csv") == 3);  // 2 epochs of one step

    {
      std::ofstream bad(dir / "bad.ini");
      bad << "batch_size = 1\n";
    }
    CHECK(cli({"train", "--config", (dir / "bad.ini").string(), "--manifest", "m", "--out", "o"}).code == kExitConfig);
  }

  TEST_CASE("fingerprint, index, query and eval") {
    test::TempDir dir("pipeline");
    const std::string tracks = (corpus() / "tracks.txt").string();
    const std::string model = (dir / "m.gfpm").string();
    const std::string store = (dir / "s.grfp").string();
    const std::string index = (dir / "i.gfpi").string();
    REQUIRE(cli(with_small({"train", "--manifest", tracks, "--out", model, "--epochs", "1", "--batch_size", "8"})).code ==
            kExitOk);

    {
      std::ofstream(dir / "empty.txt");
    }
    CHECK(cli({"fingerprint", "--manifest", (dir / "empty.txt").string(), "--checkpoint", model, "--out", store}).code ==
          kExitData);

    Run r = cli({"fingerprint", "--manifest", tracks, "--checkpoint", model, "--out", store});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    CHECK(line_count(store + ".jsonl") == 8);
    CHECK_NOTHROW(load_checkpoint(model));
    REQUIRE(cli({"fingerprint", "--manifest", tracks, "--checkpoint", model, "--out", store + ".again"}).code == kExitOk);
    CHECK(slurp(store) == slurp(store + ".again"));
    CHECK(fs::file_size(store) == 4 + 2 + 2 + 8 + 8 * 21 * 32 * 4);

    const Run few = cli({"index-build", "--store", store, "--out", index, "--n_centroids", "1000", "--m_subspaces", "4",
                         "--bits_per_code", "4"});
    CHECK(few.code == kExitConfig);
    CHECK(few.err.find("lower --n_centroids") != std::string::npos);
    r = cli(with_small({"index-build", "--store", store, "--out", index}));
    INFO(r.err);
    REQUIRE(r.code == kExitOk);

    // A clean excerpt of track 3 starting at 0.5 s.
    const WaveBuffer src = read_wav(corpus() / "tracks/track_0003.wav");
    write_wav(dir / "q.wav", slice(src, 8000, 24000));
    r = cli({"query", "--audio", (dir / "q.wav").string(), "--store", store, "--index", index, "--checkpoint", model});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j["match"].is_object());
    CHECK(j["match"]["start_ms"].get<double>() == doctest::Approx(500.0));
    CHECK(j["match"]["track_id"].get<std::string>().find("track_0003") != std::string::npos);

    // Narrow search: one hit for the single segment, one list probed.
    r = cli({"query", "--audio", (dir / "q.wav").string(), "--store", store, "--index", index, "--checkpoint", model,
             "--nprobe", "1", "--topn", "1"});
    REQUIRE(r.code == kExitOk);
    const auto narrow = nlohmann::json::parse(r.out);
    if (narrow["match"].is_object()) CHECK(narrow["match"]["candidates"].get<int>() <= 1);

    write_wav(dir / "short.wav", slice(src, 0, 8000));
    CHECK(cli({"query", "--audio", (dir / "short.wav").string(), "--store", store, "--index", index, "--checkpoint",
               model})
              .code == kExitData);

    r = cli({"make-queries", "--manifest", tracks, "--out", (dir / "q").string(), "--n_queries", "6", "--aligned",
             "--snr_db", "100", "--seed", "2"});
    REQUIRE(r.code == kExitOk);
    r = cli({"eval", "--queries", (dir / "q/queries.jsonl").string(), "--store", store, "--index", index,
             "--checkpoint", model});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report["margin_ms"] == 50.0);
    CHECK(report["total"] == 6);
    CHECK(report["correct"].get<int>() <= 6);
    CHECK(report["top1_hit_rate"].get<double>() == doctest::Approx(100.0 * report["correct"].get<double>() / 6.0));
  }
}
