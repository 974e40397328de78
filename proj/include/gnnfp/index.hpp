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

// Inverted-file index with product-quantised residuals (IVF-PQ).
//
// A coarse k-means quantizer partitions the space into n_centroids cells.
// Each vector is stored in the inverted list of its nearest cell as an
// m-byte code: the residual (vector - cell centroid) is split into m
// sub-vectors, each replaced by the index of its nearest sub-centroid.
// Search probes the nprobe nearest cells and ranks their entries by
// asymmetric distance, i.e. the exact query residual against the
// reconstructed database residual, using one lookup table per subspace.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_set>
#include <vector>

namespace gnnfp {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Squared Euclidean distance accumulated in double.
float l2_sq(std::span<const float> a, std::span<const float> b);

inline std::span<const float> row_span(const FloatMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// --- k-means ---------------------------------------------------------------

struct KMeansConfig {
  int k = 256;
  int iterations = 25;
  std::uint64_t seed = 0;
  /// Subsample the training set to at most this many points (0 = all).
  std::size_t max_points = 0;
};

struct KMeansResult {
  FloatMatrix centroids;
  std::vector<int> assignment;
  /// Sum of squared distances after each assignment step.
  std::vector<double> objective;
};

/// k-means++ seeding followed by Lloyd iterations. Empty clusters are
/// reseeded with the point farthest from its centroid. If the data has fewer
/// distinct points than k, the surplus centroids duplicate existing points.
KMeansResult kmeans(const FloatMatrix& data, const KMeansConfig& cfg);

/// Index of the nearest row of `centroids` (exact, ties to the lower index).
int nearest_row(const FloatMatrix& centroids, std::span<const float> v);

// --- IVF-PQ ----------------------------------------------------------------

struct IndexConfig {
  int dim = 128;
  int n_centroids = 256;
  int m_subspaces = 8;
  int bits_per_code = 8;
  int nprobe = 8;
  int kmeans_iters = 25;
  std::uint64_t seed = 0;
  /// Training points per centroid used by each k-means (0 = all).
  int max_points_per_centroid = 256;
  /// Debug mode: keep raw vectors and rank by exact distance instead of PQ.
  bool exact_debug = false;

  int sub_dim() const { return dim / m_subspaces; }
  int codebook_size() const { return 1 << bits_per_code; }
  void validate() const;
};

struct SearchHit {
  std::uint64_t id = 0;
  float distance = 0.0f;
  bool operator==(const SearchHit&) const = default;
};

/// Orders hits by ascending distance, ties to the lower id.
inline bool hit_less(const SearchHit& a, const SearchHit& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

struct IndexTrainStats {
  std::vector<double> coarse_objective;
  std::vector<std::vector<double>> pq_objective;  // per subspace
};

class IvfPqIndex {
 public:
  explicit IvfPqIndex(const IndexConfig& cfg = {});

  const IndexConfig& config() const { return cfg_; }
  bool trained() const { return trained_; }
  std::size_t size() const { return total_; }

  /// Coarse quantizer, then one k-means per subspace on residuals.
  const IndexTrainStats& train(const FloatMatrix& vectors);
  const IndexTrainStats& train_stats() const { return stats_; }

  /// Adds vectors with unique ids; returns the number added.
  std::size_t add(const FloatMatrix& vectors, std::span<const std::uint64_t> ids);

  /// Top-k by ascending (approximate) squared distance.
  std::vector<SearchHit> search(std::span<const float> query, int topk, int nprobe) const;
  std::vector<SearchHit> search(std::span<const float> query, int topk) const {
    return search(query, topk, cfg_.nprobe);
  }

  int assign_coarse(std::span<const float> v) const;
  std::vector<std::uint8_t> encode_residual(std::span<const float> residual) const;
  std::vector<float> decode_residual(std::span<const std::uint8_t> code) const;
  /// Asymmetric distance between `query` and an encoded entry of `list`.
  float asymmetric_distance(std::span<const float> query, int list,
                            std::span<const std::uint8_t> code) const;

  const FloatMatrix& centroids() const { return centroids_; }
  /// Row s * codebook_size + j holds sub-centroid j of subspace s.
  const FloatMatrix& codebooks() const { return codebooks_; }
  const std::vector<std::uint64_t>& list_ids(int list) const { return ids_[list]; }
  const std::vector<std::uint8_t>& list_codes(int list) const { return codes_[list]; }
  std::vector<std::size_t> list_sizes() const;

  /// Magic "GFPI", u16 version, config echo, centroids, codebooks, then per
  /// list (length u64, ids u64, codes). All little-endian.
  void save(const std::filesystem::path& path) const;
  static IvfPqIndex load(const std::filesystem::path& path);

  static constexpr std::uint16_t kFormatVersion = 1;

 private:
  void require_trained() const;
  void fill_lut(std::span<const float> residual, std::vector<float>& lut) const;

  IndexConfig cfg_;
  bool trained_ = false;
  FloatMatrix centroids_;
  FloatMatrix codebooks_;
  std::vector<std::vector<std::uint64_t>> ids_;
  std::vector<std::vector<std::uint8_t>> codes_;
  std::vector<std::vector<float>> raw_;  // exact_debug only
  std::unordered_set<std::uint64_t> known_ids_;
  std::size_t total_ = 0;
  IndexTrainStats stats_;
};

/// Exact scan over the rows of `vectors` (ids = row indices unless given).
std::vector<SearchHit> brute_force_search(std::span<const float> query, const FloatMatrix& vectors,
                                          int topk, std::span<const std::uint64_t> ids = {});

}  // namespace gnnfp
