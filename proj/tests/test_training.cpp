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

#include "gnnfp/synth.hpp"
#include "gnnfp/training.hpp"
#include "oracles.hpp"

using namespace gnnfp;
using gnnfp::test::Mat;

namespace {

EncoderConfig small_encoder(std::uint64_t seed) {
  EncoderConfig c;
  c.stem_channels = {8, 16};
  c.node_dim = 16;
  c.stages = {{1, 16, true}, {1, 32, false}};
  c.embed_dim = 32;
  c.ffn_expansion = 2;
  c.seed = seed;
  return c;
}

AugmentConfig offset_only() {
  AugmentConfig a;
  a.noise_enabled = false;
  a.reverb_prob = 0.0;
  return a;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("NT-Xent with a single pair is exactly zero") {
    for (std::uint64_t s = 0; s < 5; ++s) CHECK(nt_xent_loss(test::random_matrix(2, 16, s), 0.05).loss == 0.0);
  }

  TEST_CASE("NT-Xent matches direct summation") {
    Mat<double> z = Mat<double>::Zero(4, 2);
    z << 1, 0, 1, 0, 0, 1, 0, 1;
    CHECK(std::abs(nt_xent_loss(z, 0.05).loss - test::nt_xent_oracle(z, 0.05)) < 1e-6);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Mat<double> r = test::random_matrix(8, 16, s);
      CHECK(std::abs(nt_xent_loss(r, 0.05).loss - test::nt_xent_oracle(r, 0.05)) < 1e-6);
    }
  }

  TEST_CASE("NT-Xent symmetries") {
    const Mat<double> z = test::random_matrix(10, 8, 3);
    Mat<double> swapped = z;
    for (Eigen::Index i = 0; i < z.rows(); i += 2) {
      swapped.row(i) = z.row(i + 1);
      swapped.row(i + 1) = z.row(i);
    }
    CHECK(std::abs(nt_xent_loss(z, 0.05).loss - nt_xent_loss(swapped, 0.05).loss) < 1e-9);

    // Random orthogonal rotation from a QR factorisation.
    const Eigen::MatrixXd a = test::random_matrix(8, 8, 4);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    const Mat<double> rotated = z * q;
    CHECK(std::abs(nt_xent_loss(z, 0.05).loss - nt_xent_loss(rotated, 0.05).loss) < 1e-6);
    CHECK(std::isfinite(nt_xent_loss(z, 0.05).loss));
  }

  TEST_CASE("NT-Xent gradient matches finite differences") {
    const auto r = test::check_nt_xent(5, 3, 8);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }

  TEST_CASE("NT-Xent input validation") {
    CHECK_THROWS(nt_xent_loss(test::random_matrix(3, 4, 1), 0.05));
    CHECK_THROWS(nt_xent_loss(test::random_matrix(4, 4, 1), 0.0));
  }

  TEST_CASE("cosine schedule") {
    CHECK(lr_at(0, 100, 1e-3) == doctest::Approx(1e-3));
    CHECK(lr_at(100, 100, 1e-3) == doctest::Approx(0.0));
    CHECK(lr_at(50, 100, 1e-3) == doctest::Approx(5e-4));
  }

  TEST_CASE("defaults and validation") {
    TrainConfig c;
    CHECK(c.tau == 0.05);
    CHECK(c.batch_size == 256);
    CHECK(c.epochs == 400);
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("first Adam step moves by lr against the gradient sign") {
    Encoder<float> enc(test::tiny_config(1));
    TrainConfig cfg;
    Adam adam(cfg);
    std::vector<Mat<float>> before;
    enc.zero_grad();
    enc.visit([&](const std::string&, nn::Param<float>& p) {
      if (p.buffer) return;
      p.grad.setConstant(0.5f);
      p.grad(0, 0) = -2.0f;
      before.push_back(p.value);
    });
    adam.step(enc, 1e-2);
    std::size_t i = 0;
    enc.visit([&](const std::string&, nn::Param<float>& p) {
      if (p.buffer) return;
      const Mat<float> delta = p.value - before[i++];
      CHECK(delta(0, 0) == doctest::Approx(1e-2).epsilon(1e-4));
      if (delta.size() > 1) CHECK(delta.data()[1] == doctest::Approx(-1e-2).epsilon(1e-4));
    });
    CHECK(adam.steps_taken() == 1);
  }

  TEST_CASE("pair construction") {
    const auto tracks = synth_tracks(3, 2.0, 5);
    std::vector<SegmentRef> segs;
    for (const auto& t : tracks) segs.push_back({&t, 4000, 16000});
    Rng r1(1), r2(1);
    const PairViews same = make_pairs(segs, AugmentConfig::disabled(), {}, {}, r1);
    REQUIRE(same.anchors.size() == 3);
    REQUIRE(same.positives.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same.anchors[i].tensor == same.positives[i].tensor);
    const PairViews again = make_pairs(segs, AugmentConfig::disabled(), {}, {}, r2);
    CHECK(again.anchors[1].tensor == same.anchors[1].tensor);
    CHECK(interleave(same).size() == 6);

    AudioBank noise;
    noise.add("n", synth_noise(2, 3.0));
    AugmentConfig noisy;
    noisy.reverb_prob = 0.0;
    Rng r3(7), r4(7);
    const PairViews a = make_pairs(segs, noisy, {&noise, nullptr}, {}, r3);
    const PairViews b = make_pairs(segs, noisy, {&noise, nullptr}, {}, r4);
    CHECK(a.positives[2].tensor == b.positives[2].tensor);
    CHECK(a.positives[2].tensor != a.anchors[2].tensor);
  }

  TEST_CASE("step counts") {
    CHECK(steps_per_epoch(8, 4) == 2);
    CHECK(steps_per_epoch(9, 4) == 2);
    CHECK(steps_per_epoch(10, 4) == 3);

    const auto tracks = synth_tracks(8, 1.5, 3);
    Encoder<float> enc(small_encoder(1));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    FitOptions opt;
    opt.augment = offset_only();
    const FitResult r = fit(tracks, enc, cfg, opt);
    CHECK(r.total_steps == 2);
    REQUIRE(r.epochs.size() == 1);
    CHECK(r.epochs[0].steps == 2);
  }

  TEST_CASE("loss trends down on a tiny dataset") {
    const auto tracks = synth_tracks(8, 3.0, 21);
    Encoder<float> enc(small_encoder(2));
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.samples_per_track = 16;
    cfg.seed = 3;
    FitOptions opt;
    opt.augment = offset_only();
    const FitResult r = fit(tracks, enc, cfg, opt);
    REQUIRE(r.epochs.size() == 20);
    std::string trace;
    for (const auto& e : r.epochs) trace += std::to_string(e.mean_loss) + " ";
    INFO(trace);
    // Segment draws make single epochs noisy, so the trend is taken over
    // consecutive 5-epoch means; at most one of them may go up.
    std::vector<double> means(4, 0.0);
    for (std::size_t e = 0; e < 20; ++e) means[e / 5] += r.epochs[e].mean_loss / 5.0;
    int regressions = 0;
    for (std::size_t w = 1; w < means.size(); ++w) regressions += means[w] > means[w - 1];
    CHECK(regressions <= 1);
    CHECK(means.back() < 0.5 * means.front());
  }

  TEST_CASE("seeded runs write identical metrics and checkpoints") {
    test::TempDir dir("fit");
    const auto tracks = synth_tracks(4, 1.5, 8);
    for (const char* tag : {"a", "b"}) {
      Encoder<float> enc(small_encoder(4));
      TrainConfig cfg;
      cfg.epochs = 2;
      cfg.batch_size = 4;
      cfg.seed = 99;
      FitOptions opt;
      opt.augment = offset_only();
      opt.metrics_csv = dir / (std::string(tag) + ".csv");
      opt.checkpoint_dir = dir / tag;
      fit(tracks, enc, cfg, opt);
    }
    const std::string a = slurp(dir / "a.csv");
    CHECK(a.rfind("epoch,step,lr,loss\n", 0) == 0);
    CHECK(a == slurp(dir / "b.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "last.gfpm"));
    CHECK(std::filesystem::exists(dir / "a" / "best.gfpm"));
    CHECK(slurp(dir / "a" / "last.gfpm") == slurp(dir / "b" / "last.gfpm"));
  }
}
