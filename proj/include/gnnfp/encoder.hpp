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

// Graph neural network fingerprint encoder.
//
//   stem (strided convs) -> node projection -> per stage:
//     [grapher block, FFN block] x blocks, optional strided downsample
//   -> mean pool -> linear -> L2 normalise
//
// Grapher blocks rebuild an exact k-NN graph over the current node features
// and aggregate neighbours with a max-relative graph convolution.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gnnfp/features.hpp"
#include "gnnfp/nn.hpp"

namespace gnnfp {

struct StageConfig {
  int blocks = 2;
  int channels = 64;
  bool downsample = false;
  bool operator==(const StageConfig&) const = default;
};

struct EncoderConfig {
  int input_height = 64;  // mel bins
  int input_width = 32;   // frames
  std::vector<int> stem_channels{32, 64};
  std::vector<std::pair<int, int>> stem_strides{{2, 2}, {2, 2}};
  int node_dim = 64;
  int k = 9;
  std::vector<StageConfig> stages{{2, 64, true}, {2, 128, false}};
  int embed_dim = 128;
  int ffn_expansion = 4;
  nn::Activation activation = nn::Activation::kGelu;
  bool batch_norm = true;
  /// Build the k-NN graph from the W_in-transformed features (true) or from
  /// the block input (false).
  bool knn_after_input_fc = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Node grid (height, width) after the stem.
  std::pair<int, int> stem_output_hw() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// Per-node list of the k nearest other nodes, ascending by Euclidean
/// distance, ties to the lower index.
struct KnnGraph {
  int nodes = 0;
  int k = 0;
  std::vector<int> neighbours;  // nodes * k

  std::span<const int> of(int i) const {
    return {neighbours.data() + static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)};
  }
};

template <typename T>
KnnGraph build_knn_graph(const nn::Mat<T>& nodes, int k);

/// One graph per example; rows of `nodes` are grouped per example.
template <typename T>
std::vector<KnnGraph> build_batch_graphs(const nn::Mat<T>& nodes, int batch, int k);

/// [x_i, max_{j in N(i)} (x_j - x_i)] for every node. If `argmax` is given it
/// receives, per (node, channel), the global row index of the winning
/// neighbour.
template <typename T>
nn::Mat<T> max_relative_aggregate(const nn::Mat<T>& x, std::span<const KnnGraph> graphs,
                                  std::vector<int>* argmax = nullptr);

/// Max-relative aggregation followed by W_update (2d -> d).
template <typename T>
class GraphConv {
 public:
  struct Cache {
    std::vector<int> argmax;
    typename nn::Linear<T>::Cache update;
  };

  GraphConv() = default;
  GraphConv(int dim, std::mt19937_64& rng) : update(2 * dim, dim, rng) { update.row_invariant = true; }

  nn::Mat<T> forward(const nn::Mat<T>& x, std::span<const KnnGraph> graphs, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dy, const Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) { update.visit(prefix + ".update", f); }

  nn::Linear<T> update;
};

/// 1x1 projection of grid points to node embeddings: linear, norm, activation.
template <typename T>
class NodeProjection {
 public:
  struct Cache {
    typename nn::Linear<T>::Cache fc;
    typename nn::BatchNorm<T>::Cache bn;
    typename nn::Act<T>::Cache act;
  };

  NodeProjection() = default;
  NodeProjection(int in, int out, const EncoderConfig& cfg, std::mt19937_64& rng)
      : fc(in, out, rng), bn(out, cfg.batch_norm), act(cfg.activation) {}

  nn::Mat<T> forward(const nn::Mat<T>& x, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dy, Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc.visit(prefix + ".fc", f);
    bn.visit(prefix + ".bn", f);
  }

  nn::Linear<T> fc;
  nn::BatchNorm<T> bn;
  nn::Act<T> act;
};

/// y = BN(W_out * act(GraphConv(BN(W_in * x)))) + x, with the graph rebuilt
/// from the current features on every call.
template <typename T>
class GrapherBlock {
 public:
  struct Cache {
    typename nn::Linear<T>::Cache fc_in;
    typename nn::BatchNorm<T>::Cache bn_in;
    typename GraphConv<T>::Cache conv;
    typename nn::Act<T>::Cache act;
    typename nn::Linear<T>::Cache fc_out;
    typename nn::BatchNorm<T>::Cache bn_out;
    std::vector<KnnGraph> graphs;
  };

  GrapherBlock() = default;
  GrapherBlock(int dim, const EncoderConfig& cfg, std::mt19937_64& rng)
      : fc_in(dim, dim, rng), bn_in(dim, cfg.batch_norm), conv(dim, rng),
        act(cfg.activation), fc_out(dim, dim, rng), bn_out(dim, cfg.batch_norm),
        k_(cfg.k), knn_after_input_fc_(cfg.knn_after_input_fc) {}

  nn::Mat<T> forward(const nn::Mat<T>& x, int batch, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dy, Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc_in.visit(prefix + ".fc_in", f);
    bn_in.visit(prefix + ".bn_in", f);
    conv.visit(prefix + ".graph_conv", f);
    fc_out.visit(prefix + ".fc_out", f);
    bn_out.visit(prefix + ".bn_out", f);
  }

  nn::Linear<T> fc_in;
  nn::BatchNorm<T> bn_in;
  GraphConv<T> conv;
  nn::Act<T> act;
  nn::Linear<T> fc_out;
  nn::BatchNorm<T> bn_out;

 private:
  int k_ = 9;
  bool knn_after_input_fc_ = true;
};

/// y = BN(W2 * act(BN(W1 * x))) + x, hidden width expansion * dim.
template <typename T>
class FfnBlock {
 public:
  struct Cache {
    typename nn::Linear<T>::Cache fc1;
    typename nn::BatchNorm<T>::Cache bn1;
    typename nn::Act<T>::Cache act;
    typename nn::Linear<T>::Cache fc2;
    typename nn::BatchNorm<T>::Cache bn2;
  };

  FfnBlock() = default;
  FfnBlock(int dim, const EncoderConfig& cfg, std::mt19937_64& rng)
      : fc1(dim, cfg.ffn_expansion * dim, rng), bn1(cfg.ffn_expansion * dim, cfg.batch_norm),
        act(cfg.activation), fc2(cfg.ffn_expansion * dim, dim, rng), bn2(dim, cfg.batch_norm) {}

  int hidden_width() const { return fc1.out_features(); }

  nn::Mat<T> forward(const nn::Mat<T>& x, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dy, Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc1.visit(prefix + ".fc1", f);
    bn1.visit(prefix + ".bn1", f);
    fc2.visit(prefix + ".fc2", f);
    bn2.visit(prefix + ".bn2", f);
  }

  nn::Linear<T> fc1;
  nn::BatchNorm<T> bn1;
  nn::Act<T> act;
  nn::Linear<T> fc2;
  nn::BatchNorm<T> bn2;
};

/// Strided 3x3 convolution + norm (+ optional activation).
template <typename T>
class ConvUnit {
 public:
  struct Cache {
    typename nn::Conv2d<T>::Cache conv;
    typename nn::BatchNorm<T>::Cache bn;
    typename nn::Act<T>::Cache act;
  };

  ConvUnit() = default;
  ConvUnit(int in, int out, int stride_h, int stride_w, bool activate,
           const EncoderConfig& cfg, std::mt19937_64& rng)
      : conv(in, out, stride_h, stride_w, rng), bn(out, cfg.batch_norm),
        act(cfg.activation), activate_(activate) {}

  nn::GridShape output_shape(const nn::GridShape& in) const { return conv.output_shape(in); }
  nn::Mat<T> forward(const nn::Mat<T>& x, const nn::GridShape& in, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dy, Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    conv.visit(prefix + ".conv", f);
    bn.visit(prefix + ".bn", f);
  }

  nn::Conv2d<T> conv;
  nn::BatchNorm<T> bn;
  nn::Act<T> act;

 private:
  bool activate_ = true;
};

/// Mean over each example's nodes, linear projection, L2 normalisation.
template <typename T>
class PoolProject {
 public:
  struct Cache {
    typename nn::Linear<T>::Cache fc;
    nn::Mat<T> z;
    nn::RowVec<T> norms;
    int nodes = 0;
  };

  PoolProject() = default;
  PoolProject(int dim, int embed_dim, std::mt19937_64& rng) : fc(dim, embed_dim, rng) {}

  nn::Mat<T> forward(const nn::Mat<T>& x, int batch, Cache* cache) const;
  nn::Mat<T> backward(const nn::Mat<T>& dz, Cache& cache);

  template <typename F>
  void visit(const std::string& prefix, F&& f) { fc.visit(prefix + ".fc", f); }

  nn::Linear<T> fc;
};

template <typename T>
struct Stage {
  std::vector<GrapherBlock<T>> graphers;
  std::vector<FfnBlock<T>> ffns;
  std::vector<ConvUnit<T>> downsample;  // zero or one
};

/// The full encoder. `encode` is const and safe to call concurrently;
/// `forward_train` / `backward` mutate gradients and running statistics.
template <typename T>
class Encoder {
 public:
  struct Cache {
    std::vector<typename ConvUnit<T>::Cache> stem;
    typename NodeProjection<T>::Cache projection;
    std::vector<std::vector<typename GrapherBlock<T>::Cache>> graphers;
    std::vector<std::vector<typename FfnBlock<T>::Cache>> ffns;
    std::vector<typename ConvUnit<T>::Cache> downsample;
    typename PoolProject<T>::Cache head;
  };

  Encoder() = default;
  explicit Encoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  /// Channel-last input matrix for a batch of features.
  static nn::Mat<T> pack(std::span<const PositionalFeature> batch);

  /// Inference: B x embed_dim unit-norm rows.
  nn::Mat<T> encode(std::span<const PositionalFeature> batch) const;
  nn::Mat<T> encode_packed(const nn::Mat<T>& input, int batch) const;

  /// Training-mode forward (batch statistics), recording the tape.
  nn::Mat<T> forward_train(const nn::Mat<T>& input, int batch, Cache& cache);
  /// Back-propagates d loss / d embeddings; accumulates parameter gradients.
  void backward(const nn::Mat<T>& d_embeddings, Cache& cache);

  /// Visits every parameter and buffer with a stable hierarchical name.
  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].visit("stem." + std::to_string(i), f);
    projection_.visit("projection", f);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const std::string prefix = "stages." + std::to_string(s);
      for (std::size_t b = 0; b < stages_[s].graphers.size(); ++b) {
        stages_[s].graphers[b].visit(prefix + ".grapher." + std::to_string(b), f);
        stages_[s].ffns[b].visit(prefix + ".ffn." + std::to_string(b), f);
      }
      for (auto& d : stages_[s].downsample) d.visit(prefix + ".downsample", f);
    }
    head_.visit("head", f);
  }

  void zero_grad();
  std::size_t parameter_count();

  /// Element-type conversion, e.g. for double-precision checks of a trained
  /// float model.
  template <typename U>
  Encoder<U> cast() const;

  std::vector<ConvUnit<T>>& stem() { return stem_; }
  NodeProjection<T>& projection() { return projection_; }
  std::vector<Stage<T>>& stages() { return stages_; }
  PoolProject<T>& head() { return head_; }

 private:
  template <typename U>
  friend class Encoder;

  nn::Mat<T> run(const nn::Mat<T>& input, int batch, Cache* cache) const;

  EncoderConfig cfg_;
  std::vector<ConvUnit<T>> stem_;
  NodeProjection<T> projection_;
  std::vector<Stage<T>> stages_;
  PoolProject<T> head_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

// Checkpoint file: magic "GFPM", u16 version, config echo (JSON string),
// then named tensors (name, rank, dims, row-major f32 LE).
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                     const nlohmann::json& extra = {});
Encoder<float> load_checkpoint(const std::filesystem::path& path,
                               nlohmann::json* extra = nullptr);

}  // namespace gnnfp

#include "gnnfp/encoder_impl.hpp"
