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

#include "gnnfp/encoder.hpp"
#include "gnnfp/features.hpp"
#include "gnnfp/synth.hpp"
#include "oracles.hpp"

using namespace gnnfp;
using gnnfp::test::Mat;

namespace {

std::vector<PositionalFeature> features_of(int n, std::uint64_t seed) {
  const WaveBuffer track = synth_track(seed, {1.0 + 0.1 * (n - 1), 16000, 6.0});
  std::vector<PositionalFeature> out;
  for (const auto& seg : segment(track, {})) out.push_back(extract_features(seg));
  return out;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("stem geometry") {
    EncoderConfig c;
    CHECK(c.stem_output_hw() == std::pair{16, 8});
    c.stem_strides = {{1, 1}, {1, 1}};
    CHECK(c.stem_output_hw() == std::pair{64, 32});
  }

  TEST_CASE("downsampling halves the grid") {
    std::mt19937_64 rng(1);
    const EncoderConfig cfg;
    ConvUnit<float> down(64, 64, 2, 2, false, cfg, rng);
    CHECK(down.output_shape({1, 16, 8}) == nn::GridShape{1, 8, 4});
    // From a 32 x 16 grid two reductions are needed to reach 8 x 4.
    CHECK(down.output_shape(down.output_shape({1, 32, 16})) == nn::GridShape{1, 8, 4});
  }

  TEST_CASE("k-NN small cases") {
    Mat<double> line(4, 1);
    line << 0, 1, 3, 7;
    CHECK(build_knn_graph(line, 1).neighbours == std::vector<int>{1, 0, 1, 2});

    const Mat<double> same = Mat<double>::Constant(5, 3, 0.7);
    const KnnGraph g = build_knn_graph(same, 2);
    CHECK(g.neighbours == std::vector<int>{1, 2, 0, 2, 0, 1, 0, 1, 0, 1});
  }

  TEST_CASE("k-NN equals the brute-force oracle") {
    for (std::uint64_t s = 0; s < 40; ++s) {
      const int n = 2 + static_cast<int>(s * 7 % 120);
      const int d = 1 + static_cast<int>(s % 17);
      const int k = std::min(n - 1, 1 + static_cast<int>(s % 9));
      // Rounded coordinates force distance ties.
      Mat<double> x = test::random_matrix(n, d, s);
      if (s % 2 == 0) x = (x.array() * 2.0).round().matrix();
      const KnnGraph g = build_knn_graph(x, k);
      const auto oracle = test::knn_oracle(x, k);
      for (int i = 0; i < n; ++i) {
        REQUIRE(std::vector<int>(g.of(i).begin(), g.of(i).end()) == oracle[i]);
      }
    }
  }

  TEST_CASE("k must be smaller than the node count") {
    CHECK_THROWS(build_knn_graph(test::random_matrix(3, 2, 1), 3));
  }

  TEST_CASE("max-relative aggregation") {
    SUBCASE("constant field gives a zero relative term") {
      const Mat<double> x = Mat<double>::Constant(6, 4, -1.25);
      const std::vector<KnnGraph> g{build_knn_graph(x, 3)};
      const Mat<double> y = max_relative_aggregate(x, std::span<const KnnGraph>(g));
      CHECK(y.rightCols(4).isZero(0.0));
      CHECK(y.leftCols(4) == x);
    }
    SUBCASE("two nodes") {
      Mat<double> x(2, 3);
      x << 1, 2, 3, -1, 5, 0;
      const std::vector<KnnGraph> g{build_knn_graph(x, 1)};
      const Mat<double> y = max_relative_aggregate(x, std::span<const KnnGraph>(g));
      CHECK(y.row(0) == (Mat<double>(1, 6) << 1, 2, 3, -2, 3, -3).finished());
      CHECK(y.row(1) == (Mat<double>(1, 6) << -1, 5, 0, 2, -3, 3).finished());
    }
    SUBCASE("random 8 nodes match the loop oracle") {
      const Mat<double> x = test::random_matrix(8, 4, 77);
      const std::vector<KnnGraph> g{build_knn_graph(x, 3)};
      const Mat<double> y = max_relative_aggregate(x, std::span<const KnnGraph>(g));
      CHECK((y - test::aggregate_oracle(x, test::knn_oracle(x, 3))).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("graph conv is permutation equivariant") {
    for (std::uint64_t s = 0; s < 10; ++s) CHECK(test::graph_conv_permutation_equivariant(s, 20 + 3 * s, 6, 4));
  }

  TEST_CASE("zero-weight blocks reduce to the residual path") {
    std::mt19937_64 rng(3);
    const EncoderConfig cfg;
    const Mat<float> x = test::random_matrix<float>(32, 16, 4);
    GrapherBlock<float> g(16, cfg, rng);
    g.fc_in.weight.value.setZero();
    g.fc_in.bias.value.setZero();
    g.fc_out.weight.value.setZero();
    g.fc_out.bias.value.setZero();
    CHECK(g.forward(x, 1, nullptr) == x);

    FfnBlock<float> f(64, cfg, rng);
    CHECK(f.hidden_width() == 256);
    FfnBlock<float> f16(16, cfg, rng);
    f16.fc2.weight.value.setZero();
    f16.fc2.bias.value.setZero();
    CHECK(f16.forward(x, nullptr) == x);
  }

  TEST_CASE("identity projection without normalisation is the activation") {
    std::mt19937_64 rng(5);
    EncoderConfig cfg;
    cfg.batch_norm = false;
    NodeProjection<double> p(4, 4, cfg, rng);
    p.fc.weight.value.setIdentity();
    p.fc.bias.value.setZero();
    const Mat<double> x = test::random_matrix(128, 4, 6);
    const Mat<double> y = p.forward(x, nullptr);
    for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(y.data()[i] == nn::Act<double>::gelu(x.data()[i]));
  }

  TEST_CASE("pooling a single node") {
    std::mt19937_64 rng(7);
    PoolProject<double> head(6, 5, rng);
    const Mat<double> x = test::random_matrix(1, 6, 8);
    Mat<double> expected = x * head.fc.weight.value + head.fc.bias.value;
    expected.row(0).normalize();
    CHECK((head.forward(x, 1, nullptr) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("block gradient checks") {
    for (std::uint64_t s : {1, 2, 3}) {
      const auto results = {test::check_projection(s), test::check_graph_conv(s), test::check_grapher_block(s),
                            test::check_ffn_block(s), test::check_pool_project(s)};
      for (const auto& r : results) {
        INFO(r.worst);
        CHECK(r.max_rel < 1e-3);
        CHECK(r.checked > 0);
      }
    }
  }

  TEST_CASE("whole-encoder gradient check") {
    const auto r = test::check_encoder(11);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-3);
  }

  TEST_CASE("default encoder outputs") {
    EncoderConfig cfg;
    cfg.seed = 42;
    const Encoder<float> enc(cfg);
    const auto feats = features_of(5, 9);
    const Mat<float> z = enc.encode(feats);
    REQUIRE(z.rows() == 5);
    REQUIRE(z.cols() == 128);
    for (Eigen::Index i = 0; i < z.rows(); ++i) CHECK(std::abs(z.row(i).norm() - 1.0f) < 1e-5f);
    CHECK(enc.encode(feats) == z);
    for (std::size_t i = 0; i < feats.size(); ++i) {
      const Mat<float> one = enc.encode(std::span<const PositionalFeature>(feats).subspan(i, 1));
      CHECK((one.row(0) - z.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-5f);
    }
    Encoder<float> counted(cfg);
    const std::size_t params = counted.parameter_count();
    CHECK(params > 100000);
    CHECK(params <= 18000000);
  }

  TEST_CASE("checkpoint round trip") {
    test::TempDir dir("ckpt");
    EncoderConfig cfg = test::tiny_config(3);
    Encoder<float> enc(cfg);
    // Perturb running statistics so buffers are covered too.
    enc.visit([](const std::string& name, nn::Param<float>& p) {
      if (name.ends_with("running_mean")) p.value.setConstant(0.25f);
    });
    save_checkpoint(dir / "m.gfpm", enc, {{"note", "x"}});
    nlohmann::json extra;
    Encoder<float> loaded = load_checkpoint(dir / "m.gfpm", &extra);
    CHECK(extra["note"] == "x");
    CHECK(loaded.config() == enc.config());
    const Mat<float> x = test::random_matrix<float>(64, 3, 4);
    CHECK(loaded.encode_packed(x, 1) == enc.encode_packed(x, 1));

    std::ofstream(dir / "bad.gfpm") << "nope";
    CHECK_THROWS(load_checkpoint(dir / "bad.gfpm"));
  }

  TEST_CASE("config json round trip and validation") {
    EncoderConfig c;
    c.k = 5;
    c.activation = nn::Activation::kRelu;
    CHECK(EncoderConfig::from_json(c.to_json()) == c);
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}
