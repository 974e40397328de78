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

#include "gnnfp/index.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "gnnfp/binary_io.hpp"
#include "gnnfp/parallel.hpp"

namespace gnnfp {

namespace {

/// Bounded max-heap keeping the `k` best hits.
class TopK {
 public:
  explicit TopK(int k) : k_(static_cast<std::size_t>(k)) { heap_.reserve(k_ + 1); }

  void push(const SearchHit& hit) {
    if (heap_.size() < k_) {
      heap_.push_back(hit);
      std::push_heap(heap_.begin(), heap_.end(), hit_less);
    } else if (hit_less(hit, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), hit_less);
      heap_.back() = hit;
      std::push_heap(heap_.begin(), heap_.end(), hit_less);
    }
  }

  std::vector<SearchHit> sorted() && {
    std::sort_heap(heap_.begin(), heap_.end(), hit_less);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<SearchHit> heap_;
};

}  // namespace

void IndexConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("index config: " + what); };
  if (dim < 1) fail("dim must be positive");
  if (n_centroids < 1) fail("n_centroids must be positive");
  if (m_subspaces < 1 || dim % m_subspaces != 0) fail("dim must be divisible by m_subspaces");
  if (bits_per_code < 1 || bits_per_code > 8) fail("bits_per_code must be in [1, 8]");
  if (nprobe < 1) fail("nprobe must be >= 1");
  if (kmeans_iters < 1) fail("kmeans_iters must be >= 1");
  if (max_points_per_centroid < 0) fail("max_points_per_centroid must be >= 0");
}

IvfPqIndex::IvfPqIndex(const IndexConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void IvfPqIndex::require_trained() const {
  if (!trained_) throw std::logic_error("index is not trained");
}

const IndexTrainStats& IvfPqIndex::train(const FloatMatrix& vectors) {
  if (vectors.cols() != cfg_.dim) {
    throw std::invalid_argument("train: expected dim " + std::to_string(cfg_.dim) + ", got " +
                                std::to_string(vectors.cols()));
  }
  const int needed = std::max(cfg_.n_centroids, cfg_.codebook_size());
  if (vectors.rows() < needed) {
    throw std::invalid_argument("train: need at least " + std::to_string(needed) +
                                " training vectors, got " + std::to_string(vectors.rows()));
  }
  bool degenerate = true;
  for (Eigen::Index i = 1; i < vectors.rows() && degenerate; ++i) {
    degenerate = vectors.row(i) == vectors.row(0);
  }
  if (degenerate) throw std::invalid_argument("train: all training vectors are identical");

  stats_ = {};
  const auto per_centroid = static_cast<std::size_t>(cfg_.max_points_per_centroid);
  KMeansResult coarse = kmeans(vectors, {cfg_.n_centroids, cfg_.kmeans_iters, cfg_.seed,
                                         per_centroid * static_cast<std::size_t>(cfg_.n_centroids)});
  centroids_ = std::move(coarse.centroids);
  stats_.coarse_objective = std::move(coarse.objective);

  FloatMatrix residuals(vectors.rows(), vectors.cols());
  parallel_for(static_cast<std::size_t>(vectors.rows()), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = nearest_row(centroids_, row_span(vectors, r));
    residuals.row(r) = vectors.row(r) - centroids_.row(c);
  });

  const int ksub = cfg_.codebook_size();
  const int dsub = cfg_.sub_dim();
  codebooks_.resize(static_cast<Eigen::Index>(cfg_.m_subspaces) * ksub, dsub);
  stats_.pq_objective.resize(static_cast<std::size_t>(cfg_.m_subspaces));
  for (int s = 0; s < cfg_.m_subspaces; ++s) {
    const FloatMatrix sub = residuals.middleCols(static_cast<Eigen::Index>(s) * dsub, dsub);
    KMeansResult pq = kmeans(sub, {ksub, cfg_.kmeans_iters, cfg_.seed + 1 + static_cast<std::uint64_t>(s),
                                   per_centroid * static_cast<std::size_t>(ksub)});
    codebooks_.middleRows(static_cast<Eigen::Index>(s) * ksub, ksub) = pq.centroids;
    stats_.pq_objective[s] = std::move(pq.objective);
  }

  ids_.assign(static_cast<std::size_t>(cfg_.n_centroids), {});
  codes_.assign(static_cast<std::size_t>(cfg_.n_centroids), {});
  raw_.assign(static_cast<std::size_t>(cfg_.n_centroids), {});
  known_ids_.clear();
  total_ = 0;
  trained_ = true;
  return stats_;
}

int IvfPqIndex::assign_coarse(std::span<const float> v) const {
  require_trained();
  return nearest_row(centroids_, v);
}

std::vector<std::uint8_t> IvfPqIndex::encode_residual(std::span<const float> residual) const {
  require_trained();
  const int ksub = cfg_.codebook_size();
  const auto dsub = static_cast<std::size_t>(cfg_.sub_dim());
  std::vector<std::uint8_t> code(static_cast<std::size_t>(cfg_.m_subspaces));
  for (int s = 0; s < cfg_.m_subspaces; ++s) {
    const auto sub = residual.subspan(static_cast<std::size_t>(s) * dsub, dsub);
    int best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (int j = 0; j < ksub; ++j) {
      const float d = l2_sq(row_span(codebooks_, static_cast<Eigen::Index>(s) * ksub + j), sub);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    code[s] = static_cast<std::uint8_t>(best);
  }
  return code;
}

std::vector<float> IvfPqIndex::decode_residual(std::span<const std::uint8_t> code) const {
  require_trained();
  const int ksub = cfg_.codebook_size();
  const int dsub = cfg_.sub_dim();
  std::vector<float> out(static_cast<std::size_t>(cfg_.dim));
  for (int s = 0; s < cfg_.m_subspaces; ++s) {
    const auto row = codebooks_.row(static_cast<Eigen::Index>(s) * ksub + code[s]);
    for (int t = 0; t < dsub; ++t) out[static_cast<std::size_t>(s * dsub + t)] = row(t);
  }
  return out;
}

std::size_t IvfPqIndex::add(const FloatMatrix& vectors, std::span<const std::uint64_t> ids) {
  require_trained();
  if (static_cast<std::size_t>(vectors.rows()) != ids.size()) {
    throw std::invalid_argument("add: vector and id counts differ");
  }
  if (vectors.rows() > 0 && vectors.cols() != cfg_.dim) {
    throw std::invalid_argument("add: dimension mismatch");
  }
  std::unordered_set<std::uint64_t> batch;
  for (std::uint64_t id : ids) {
    if (known_ids_.contains(id) || !batch.insert(id).second) {
      throw std::invalid_argument("add: duplicate id " + std::to_string(id));
    }
  }

  const auto n = static_cast<std::size_t>(vectors.rows());
  std::vector<int> lists(n);
  std::vector<std::vector<std::uint8_t>> codes(n);
  parallel_for(n, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    lists[i] = nearest_row(centroids_, row_span(vectors, r));
    const Eigen::RowVectorXf residual = vectors.row(r) - centroids_.row(lists[i]);
    codes[i] = encode_residual({residual.data(), static_cast<std::size_t>(residual.size())});
  });
  for (std::size_t i = 0; i < n; ++i) {
    ids_[lists[i]].push_back(ids[i]);
    codes_[lists[i]].insert(codes_[lists[i]].end(), codes[i].begin(), codes[i].end());
    if (cfg_.exact_debug) {
      const auto row = row_span(vectors, static_cast<Eigen::Index>(i));
      raw_[lists[i]].insert(raw_[lists[i]].end(), row.begin(), row.end());
    }
    known_ids_.insert(ids[i]);
  }
  total_ += n;
  return n;
}

void IvfPqIndex::fill_lut(std::span<const float> residual, std::vector<float>& lut) const {
  const int ksub = cfg_.codebook_size();
  const int dsub = cfg_.sub_dim();
  lut.resize(static_cast<std::size_t>(cfg_.m_subspaces) * ksub);
  for (int s = 0; s < cfg_.m_subspaces; ++s) {
    const float* r = residual.data() + static_cast<std::ptrdiff_t>(s) * dsub;
    for (int j = 0; j < ksub; ++j) {
      const float* c = codebooks_.data() + (static_cast<std::ptrdiff_t>(s) * ksub + j) * dsub;
      float acc = 0.0f;
      for (int t = 0; t < dsub; ++t) {
        const float diff = r[t] - c[t];
        acc += diff * diff;
      }
      lut[static_cast<std::size_t>(s) * ksub + j] = acc;
    }
  }
}

float IvfPqIndex::asymmetric_distance(std::span<const float> query, int list,
                                      std::span<const std::uint8_t> code) const {
  require_trained();
  std::vector<float> residual(query.begin(), query.end());
  for (int t = 0; t < cfg_.dim; ++t) residual[t] -= centroids_(list, t);
  std::vector<float> lut;
  fill_lut(residual, lut);
  const int ksub = cfg_.codebook_size();
  float d = 0.0f;
  for (int s = 0; s < cfg_.m_subspaces; ++s) d += lut[static_cast<std::size_t>(s) * ksub + code[s]];
  return d;
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const float> query, int topk, int nprobe) const {
  require_trained();
  if (total_ == 0) throw std::logic_error("search: index is empty");
  if (static_cast<int>(query.size()) != cfg_.dim) throw std::invalid_argument("search: dimension mismatch");
  if (topk < 1) throw std::invalid_argument("search: topk must be >= 1");
  nprobe = std::clamp(nprobe, 1, cfg_.n_centroids);

  std::vector<std::pair<float, int>> coarse(static_cast<std::size_t>(cfg_.n_centroids));
  for (int c = 0; c < cfg_.n_centroids; ++c) coarse[c] = {l2_sq(row_span(centroids_, c), query), c};
  std::partial_sort(coarse.begin(), coarse.begin() + nprobe, coarse.end());

  const int ksub = cfg_.codebook_size();
  const auto m = static_cast<std::size_t>(cfg_.m_subspaces);
  TopK best(topk);
  std::vector<float> residual(query.size());
  std::vector<float> lut;
  for (int p = 0; p < nprobe; ++p) {
    const int list = coarse[p].second;
    const auto& ids = ids_[list];
    if (ids.empty()) continue;
    if (cfg_.exact_debug) {
      const auto& raw = raw_[list];
      for (std::size_t e = 0; e < ids.size(); ++e) {
        const std::span<const float> v(raw.data() + e * cfg_.dim, static_cast<std::size_t>(cfg_.dim));
        best.push({ids[e], l2_sq(query, v)});
      }
      continue;
    }
    for (int t = 0; t < cfg_.dim; ++t) residual[t] = query[t] - centroids_(list, t);
    fill_lut(residual, lut);
    const std::uint8_t* code = codes_[list].data();
    for (std::size_t e = 0; e < ids.size(); ++e, code += m) {
      float d = 0.0f;
      for (std::size_t s = 0; s < m; ++s) d += lut[s * ksub + code[s]];
      best.push({ids[e], d});
    }
  }
  return std::move(best).sorted();
}

std::vector<std::size_t> IvfPqIndex::list_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(ids_.size());
  for (const auto& l : ids_) sizes.push_back(l.size());
  return sizes;
}

void IvfPqIndex::save(const std::filesystem::path& path) const {
  require_trained();
  if (cfg_.exact_debug) throw std::logic_error("save: exact_debug indexes are not serialisable");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  BinaryWriter w(out);
  w.bytes("GFPI", 4);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(cfg_.dim));
  w.u32(static_cast<std::uint32_t>(cfg_.n_centroids));
  w.u32(static_cast<std::uint32_t>(cfg_.m_subspaces));
  w.u32(static_cast<std::uint32_t>(cfg_.bits_per_code));
  w.u32(static_cast<std::uint32_t>(cfg_.nprobe));
  w.u32(static_cast<std::uint32_t>(cfg_.kmeans_iters));
  w.u64(cfg_.seed);
  w.u32(static_cast<std::uint32_t>(cfg_.max_points_per_centroid));
  w.array(std::span<const float>(centroids_.data(), static_cast<std::size_t>(centroids_.size())));
  w.array(std::span<const float>(codebooks_.data(), static_cast<std::size_t>(codebooks_.size())));
  for (std::size_t l = 0; l < ids_.size(); ++l) {
    w.u64(ids_[l].size());
    w.array(std::span<const std::uint64_t>(ids_[l]));
    w.bytes(reinterpret_cast<const char*>(codes_[l].data()), codes_[l].size());
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

IvfPqIndex IvfPqIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open index");
  BinaryReader r(in);
  r.expect_magic("GFPI");
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) {
    throw std::runtime_error(path.string() + ": unsupported index version " + std::to_string(version));
  }
  IndexConfig cfg;
  cfg.dim = static_cast<int>(r.u32());
  cfg.n_centroids = static_cast<int>(r.u32());
  cfg.m_subspaces = static_cast<int>(r.u32());
  cfg.bits_per_code = static_cast<int>(r.u32());
  cfg.nprobe = static_cast<int>(r.u32());
  cfg.kmeans_iters = static_cast<int>(r.u32());
  cfg.seed = r.u64();
  cfg.max_points_per_centroid = static_cast<int>(r.u32());

  IvfPqIndex index(cfg);
  index.centroids_.resize(cfg.n_centroids, cfg.dim);
  r.array(std::span<float>(index.centroids_.data(), static_cast<std::size_t>(index.centroids_.size())));
  index.codebooks_.resize(static_cast<Eigen::Index>(cfg.m_subspaces) * cfg.codebook_size(), cfg.sub_dim());
  r.array(std::span<float>(index.codebooks_.data(), static_cast<std::size_t>(index.codebooks_.size())));
  index.ids_.resize(static_cast<std::size_t>(cfg.n_centroids));
  index.codes_.resize(static_cast<std::size_t>(cfg.n_centroids));
  index.raw_.resize(static_cast<std::size_t>(cfg.n_centroids));
  for (int l = 0; l < cfg.n_centroids; ++l) {
    const std::uint64_t len = r.u64();
    index.ids_[l].resize(len);
    r.array(std::span<std::uint64_t>(index.ids_[l]));
    index.codes_[l].resize(len * static_cast<std::uint64_t>(cfg.m_subspaces));
    r.bytes(reinterpret_cast<char*>(index.codes_[l].data()), index.codes_[l].size());
    for (std::uint64_t id : index.ids_[l]) {
      if (!index.known_ids_.insert(id).second) {
        throw std::runtime_error(path.string() + ": duplicate id " + std::to_string(id));
      }
    }
    index.total_ += len;
  }
  index.trained_ = true;
  return index;
}

std::vector<SearchHit> brute_force_search(std::span<const float> query, const FloatMatrix& vectors,
                                          int topk, std::span<const std::uint64_t> ids) {
  if (topk < 1) throw std::invalid_argument("brute_force_search: topk must be >= 1");
  if (!ids.empty() && ids.size() != static_cast<std::size_t>(vectors.rows())) {
    throw std::invalid_argument("brute_force_search: id count differs from vector count");
  }
  TopK best(topk);
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const std::uint64_t id = ids.empty() ? static_cast<std::uint64_t>(i) : ids[static_cast<std::size_t>(i)];
    best.push({id, l2_sq(query, row_span(vectors, i))});
  }
  return std::move(best).sorted();
}

}  // namespace gnnfp
