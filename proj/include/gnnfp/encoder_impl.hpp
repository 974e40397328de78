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

// Template definitions for encoder.hpp. Do not include directly.

#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace gnnfp {

template <typename T>
KnnGraph build_knn_graph(const nn::Mat<T>& nodes, int k) {
  const auto n = static_cast<int>(nodes.rows());
  if (k < 1) throw std::invalid_argument("build_knn_graph: k must be >= 1");
  if (n <= k) {
    throw std::invalid_argument("build_knn_graph: need more than k=" + std::to_string(k) +
                                " nodes, got " + std::to_string(n));
  }
  nn::Mat<T> dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = T(0);
    for (int j = i + 1; j < n; ++j) {
      const T d = (nodes.row(i) - nodes.row(j)).squaredNorm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }

  KnnGraph graph;
  graph.nodes = n;
  graph.k = k;
  graph.neighbours.resize(static_cast<std::size_t>(n) * k);
  std::vector<std::pair<T, int>> candidates;
  candidates.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    candidates.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) candidates.emplace_back(dist(i, j), j);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end());
    for (int r = 0; r < k; ++r) {
      graph.neighbours[static_cast<std::size_t>(i) * k + r] = candidates[r].second;
    }
  }
  return graph;
}

template <typename T>
std::vector<KnnGraph> build_batch_graphs(const nn::Mat<T>& nodes, int batch, int k) {
  if (batch <= 0 || nodes.rows() % batch != 0) {
    throw std::invalid_argument("build_batch_graphs: rows not divisible by batch");
  }
  const auto per = nodes.rows() / batch;
  std::vector<KnnGraph> graphs;
  graphs.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    graphs.push_back(build_knn_graph<T>(nodes.middleRows(b * per, per), k));
  }
  return graphs;
}

template <typename T>
nn::Mat<T> max_relative_aggregate(const nn::Mat<T>& x, std::span<const KnnGraph> graphs,
                                  std::vector<int>* argmax) {
  const nn::Index d = x.cols();
  nn::Mat<T> out(x.rows(), 2 * d);
  out.leftCols(d) = x;
  if (argmax) argmax->assign(static_cast<std::size_t>(x.rows() * d), -1);

  nn::Index offset = 0;
  std::vector<T> best(static_cast<std::size_t>(d));
  for (const KnnGraph& g : graphs) {
    for (int i = 0; i < g.nodes; ++i) {
      const nn::Index row = offset + i;
      std::fill(best.begin(), best.end(), -std::numeric_limits<T>::infinity());
      for (int j : g.of(i)) {
        const nn::Index other = offset + j;
        for (nn::Index c = 0; c < d; ++c) {
          const T v = x(other, c) - x(row, c);
          if (v > best[c]) {
            best[c] = v;
            if (argmax) (*argmax)[static_cast<std::size_t>(row * d + c)] = static_cast<int>(other);
          }
        }
      }
      for (nn::Index c = 0; c < d; ++c) out(row, d + c) = best[c];
    }
    offset += g.nodes;
  }
  if (offset != x.rows()) {
    throw std::invalid_argument("max_relative_aggregate: graphs do not cover all nodes");
  }
  return out;
}

// --- GraphConv --------------------------------------------------------------

template <typename T>
nn::Mat<T> GraphConv<T>::forward(const nn::Mat<T>& x, std::span<const KnnGraph> graphs,
                                 Cache* cache) const {
  if (2 * x.cols() != update.in_features()) {
    throw std::invalid_argument("GraphConv: feature dimension mismatch");
  }
  const nn::Mat<T> agg = max_relative_aggregate<T>(x, graphs, cache ? &cache->argmax : nullptr);
  return update.forward(agg, cache ? &cache->update : nullptr);
}

template <typename T>
nn::Mat<T> GraphConv<T>::backward(const nn::Mat<T>& dy, const Cache& cache) {
  const nn::Mat<T> dagg = update.backward(dy, cache.update);
  const nn::Index d = dagg.cols() / 2;
  nn::Mat<T> dx = dagg.leftCols(d);
  for (nn::Index i = 0; i < dx.rows(); ++i) {
    for (nn::Index c = 0; c < d; ++c) {
      const T g = dagg(i, d + c);
      dx(cache.argmax[static_cast<std::size_t>(i * d + c)], c) += g;
      dx(i, c) -= g;
    }
  }
  return dx;
}

// --- NodeProjection ---------------------------------------------------------

template <typename T>
nn::Mat<T> NodeProjection<T>::forward(const nn::Mat<T>& x, Cache* cache) const {
  nn::Mat<T> h = fc.forward(x, cache ? &cache->fc : nullptr);
  h = bn.forward(h, cache ? &cache->bn : nullptr);
  return act.forward(h, cache ? &cache->act : nullptr);
}

template <typename T>
nn::Mat<T> NodeProjection<T>::backward(const nn::Mat<T>& dy, Cache& cache) {
  return fc.backward(bn.backward(act.backward(dy, cache.act), cache.bn), cache.fc);
}

// --- GrapherBlock -----------------------------------------------------------

template <typename T>
nn::Mat<T> GrapherBlock<T>::forward(const nn::Mat<T>& x, int batch, Cache* cache) const {
  nn::Mat<T> h = fc_in.forward(x, cache ? &cache->fc_in : nullptr);
  h = bn_in.forward(h, cache ? &cache->bn_in : nullptr);
  std::vector<KnnGraph> graphs = build_batch_graphs<T>(knn_after_input_fc_ ? h : x, batch, k_);
  nn::Mat<T> g = conv.forward(h, graphs, cache ? &cache->conv : nullptr);
  g = act.forward(g, cache ? &cache->act : nullptr);
  nn::Mat<T> o = fc_out.forward(g, cache ? &cache->fc_out : nullptr);
  o = bn_out.forward(o, cache ? &cache->bn_out : nullptr);
  if (cache) cache->graphs = std::move(graphs);
  return o + x;
}

template <typename T>
nn::Mat<T> GrapherBlock<T>::backward(const nn::Mat<T>& dy, Cache& cache) {
  nn::Mat<T> d = fc_out.backward(bn_out.backward(dy, cache.bn_out), cache.fc_out);
  d = conv.backward(act.backward(d, cache.act), cache.conv);
  d = fc_in.backward(bn_in.backward(d, cache.bn_in), cache.fc_in);
  return d + dy;
}

// --- FfnBlock ---------------------------------------------------------------

template <typename T>
nn::Mat<T> FfnBlock<T>::forward(const nn::Mat<T>& x, Cache* cache) const {
  nn::Mat<T> h = fc1.forward(x, cache ? &cache->fc1 : nullptr);
  h = bn1.forward(h, cache ? &cache->bn1 : nullptr);
  h = act.forward(h, cache ? &cache->act : nullptr);
  h = fc2.forward(h, cache ? &cache->fc2 : nullptr);
  h = bn2.forward(h, cache ? &cache->bn2 : nullptr);
  return h + x;
}

template <typename T>
nn::Mat<T> FfnBlock<T>::backward(const nn::Mat<T>& dy, Cache& cache) {
  nn::Mat<T> d = fc2.backward(bn2.backward(dy, cache.bn2), cache.fc2);
  d = fc1.backward(bn1.backward(act.backward(d, cache.act), cache.bn1), cache.fc1);
  return d + dy;
}

// --- ConvUnit ---------------------------------------------------------------

template <typename T>
nn::Mat<T> ConvUnit<T>::forward(const nn::Mat<T>& x, const nn::GridShape& in,
                                Cache* cache) const {
  nn::Mat<T> y = conv.forward(x, in, cache ? &cache->conv : nullptr);
  y = bn.forward(y, cache ? &cache->bn : nullptr);
  if (activate_) y = act.forward(y, cache ? &cache->act : nullptr);
  return y;
}

template <typename T>
nn::Mat<T> ConvUnit<T>::backward(const nn::Mat<T>& dy, Cache& cache) {
  nn::Mat<T> d = activate_ ? act.backward(dy, cache.act) : dy;
  return conv.backward(bn.backward(d, cache.bn), cache.conv);
}

// --- PoolProject ------------------------------------------------------------

template <typename T>
nn::Mat<T> PoolProject<T>::forward(const nn::Mat<T>& x, int batch, Cache* cache) const {
  if (batch <= 0 || x.rows() % batch != 0 || x.rows() == 0) {
    throw std::invalid_argument("PoolProject: rows not divisible by batch");
  }
  const nn::Index nodes = x.rows() / batch;
  nn::Mat<T> pooled(batch, x.cols());
  for (int b = 0; b < batch; ++b) {
    pooled.row(b) = x.middleRows(b * nodes, nodes).colwise().mean();
  }
  nn::Mat<T> u = fc.forward(pooled, cache ? &cache->fc : nullptr);
  nn::RowVec<T> norms(batch);
  for (int b = 0; b < batch; ++b) {
    norms(b) = std::max(u.row(b).norm(), static_cast<T>(1e-12));
    u.row(b) /= norms(b);
  }
  if (cache) {
    cache->z = u;
    cache->norms = norms;
    cache->nodes = static_cast<int>(nodes);
  }
  return u;
}

template <typename T>
nn::Mat<T> PoolProject<T>::backward(const nn::Mat<T>& dz, Cache& cache) {
  nn::Mat<T> du(dz.rows(), dz.cols());
  for (nn::Index b = 0; b < dz.rows(); ++b) {
    const T proj = cache.z.row(b).dot(dz.row(b));
    du.row(b) = (dz.row(b) - proj * cache.z.row(b)) / cache.norms(b);
  }
  const nn::Mat<T> dpooled = fc.backward(du, cache.fc);
  const nn::Index nodes = cache.nodes;
  nn::Mat<T> dx(dz.rows() * nodes, dpooled.cols());
  for (nn::Index b = 0; b < dz.rows(); ++b) {
    dx.middleRows(b * nodes, nodes).rowwise() = dpooled.row(b) / static_cast<T>(nodes);
  }
  return dx;
}

// --- Encoder ----------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  int channels = 3;
  for (std::size_t i = 0; i < cfg_.stem_channels.size(); ++i) {
    const auto [sh, sw] = cfg_.stem_strides[i];
    stem_.emplace_back(channels, cfg_.stem_channels[i], sh, sw, true, cfg_, rng);
    channels = cfg_.stem_channels[i];
  }
  projection_ = NodeProjection<T>(channels, cfg_.node_dim, cfg_, rng);
  channels = cfg_.node_dim;
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const StageConfig& sc = cfg_.stages[s];
    Stage<T> stage;
    for (int b = 0; b < sc.blocks; ++b) {
      stage.graphers.emplace_back(channels, cfg_, rng);
      stage.ffns.emplace_back(channels, cfg_, rng);
    }
    if (sc.downsample) {
      const int next = s + 1 < cfg_.stages.size() ? cfg_.stages[s + 1].channels : channels;
      stage.downsample.emplace_back(channels, next, 2, 2, false, cfg_, rng);
      channels = next;
    }
    stages_.push_back(std::move(stage));
  }
  head_ = PoolProject<T>(channels, cfg_.embed_dim, rng);
}

template <typename T>
nn::Mat<T> Encoder<T>::pack(std::span<const PositionalFeature> batch) {
  if (batch.empty()) throw std::invalid_argument("Encoder: empty batch");
  const int f = batch[0].n_freq, t = batch[0].n_time;
  nn::Mat<T> x(static_cast<nn::Index>(batch.size()) * f * t, PositionalFeature::kChannels);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].n_freq != f || batch[b].n_time != t) {
      throw std::invalid_argument("Encoder: inconsistent feature shapes in batch");
    }
    for (int fi = 0; fi < f; ++fi) {
      for (int ti = 0; ti < t; ++ti) {
        const nn::Index row = (static_cast<nn::Index>(b) * f + fi) * t + ti;
        for (int c = 0; c < PositionalFeature::kChannels; ++c) {
          x(row, c) = static_cast<T>(batch[b].at(c, fi, ti));
        }
      }
    }
  }
  return x;
}

template <typename T>
nn::Mat<T> Encoder<T>::run(const nn::Mat<T>& input, int batch, Cache* cache) const {
  nn::GridShape shape{batch, cfg_.input_height, cfg_.input_width};
  if (input.rows() != shape.rows() || input.cols() != PositionalFeature::kChannels) {
    throw std::invalid_argument("Encoder: input shape does not match config (" +
                                std::to_string(cfg_.input_height) + " x " +
                                std::to_string(cfg_.input_width) + ")");
  }
  if (cache) {
    cache->stem.assign(stem_.size(), {});
    cache->graphers.assign(stages_.size(), {});
    cache->ffns.assign(stages_.size(), {});
    cache->downsample.assign(stages_.size(), {});
  }
  nn::Mat<T> x = input;
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    x = stem_[i].forward(x, shape, cache ? &cache->stem[i] : nullptr);
    shape = stem_[i].output_shape(shape);
  }
  x = projection_.forward(x, cache ? &cache->projection : nullptr);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage<T>& stage = stages_[s];
    if (cache) {
      cache->graphers[s].resize(stage.graphers.size());
      cache->ffns[s].resize(stage.ffns.size());
    }
    for (std::size_t b = 0; b < stage.graphers.size(); ++b) {
      x = stage.graphers[b].forward(x, batch, cache ? &cache->graphers[s][b] : nullptr);
      x = stage.ffns[b].forward(x, cache ? &cache->ffns[s][b] : nullptr);
    }
    if (!stage.downsample.empty()) {
      x = stage.downsample[0].forward(x, shape, cache ? &cache->downsample[s] : nullptr);
      shape = stage.downsample[0].output_shape(shape);
    }
  }
  return head_.forward(x, batch, cache ? &cache->head : nullptr);
}

template <typename T>
nn::Mat<T> Encoder<T>::encode(std::span<const PositionalFeature> batch) const {
  return run(pack(batch), static_cast<int>(batch.size()), nullptr);
}

template <typename T>
nn::Mat<T> Encoder<T>::encode_packed(const nn::Mat<T>& input, int batch) const {
  return run(input, batch, nullptr);
}

template <typename T>
nn::Mat<T> Encoder<T>::forward_train(const nn::Mat<T>& input, int batch, Cache& cache) {
  return run(input, batch, &cache);
}

template <typename T>
void Encoder<T>::backward(const nn::Mat<T>& d_embeddings, Cache& cache) {
  nn::Mat<T> d = head_.backward(d_embeddings, cache.head);
  for (std::size_t s = stages_.size(); s-- > 0;) {
    Stage<T>& stage = stages_[s];
    if (!stage.downsample.empty()) d = stage.downsample[0].backward(d, cache.downsample[s]);
    for (std::size_t b = stage.graphers.size(); b-- > 0;) {
      d = stage.ffns[b].backward(d, cache.ffns[s][b]);
      d = stage.graphers[b].backward(d, cache.graphers[s][b]);
    }
  }
  d = projection_.backward(d, cache.projection);
  for (std::size_t i = stem_.size(); i-- > 0;) d = stem_[i].backward(d, cache.stem[i]);
}

template <typename T>
void Encoder<T>::zero_grad() {
  visit([](const std::string&, nn::Param<T>& p) { p.zero_grad(); });
}

template <typename T>
std::size_t Encoder<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, nn::Param<T>& p) {
    if (!p.buffer) n += static_cast<std::size_t>(p.value.size());
  });
  return n;
}

template <typename T>
template <typename U>
Encoder<U> Encoder<T>::cast() const {
  Encoder<U> out(cfg_);
  std::vector<const nn::Mat<T>*> values;
  const_cast<Encoder<T>&>(*this).visit(
      [&](const std::string&, nn::Param<T>& p) { values.push_back(&p.value); });
  std::size_t i = 0;
  out.visit([&](const std::string&, nn::Param<U>& p) {
    p.value = values[i++]->template cast<U>();
  });
  return out;
}

}  // namespace gnnfp
