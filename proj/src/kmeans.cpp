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

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "gnnfp/index.hpp"

namespace gnnfp {

float l2_sq(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return static_cast<float>(acc);
}

int nearest_row(const FloatMatrix& centroids, std::span<const float> v) {
  int best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const float d = l2_sq(row_span(centroids, c), v);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

namespace {

FloatMatrix subsample(const FloatMatrix& data, std::size_t max_points, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (max_points == 0 || n <= max_points) return data;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  FloatMatrix out(static_cast<Eigen::Index>(max_points), data.cols());
  for (std::size_t i = 0; i < max_points; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

FloatMatrix seed_plus_plus(const FloatMatrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  FloatMatrix centroids(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> uniform(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Eigen::Index pick = uniform(rng);
  centroids.row(0) = x.row(pick);
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = l2_sq(row_span(x, i), row_span(centroids, 0));

  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total <= 0.0) {
      pick = uniform(rng);
    } else {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min<double>(d2[i], l2_sq(row_span(x, i), row_span(centroids, c)));
    }
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const FloatMatrix& data, const KMeansConfig& cfg) {
  if (cfg.k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (data.rows() == 0) throw std::invalid_argument("kmeans: empty training set");
  if (data.rows() < cfg.k) {
    throw std::invalid_argument("kmeans: " + std::to_string(data.rows()) + " points cannot form " +
                                std::to_string(cfg.k) + " clusters");
  }
  std::mt19937_64 rng(cfg.seed);
  const FloatMatrix x = subsample(data, cfg.max_points, rng);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();

  KMeansResult result;
  result.centroids = seed_plus_plus(x, cfg.k, rng);
  auto& c = result.centroids;
  result.assignment.assign(static_cast<std::size_t>(n), -1);

  const Eigen::VectorXf x_norms = x.rowwise().squaredNorm();
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int it = 0; it < cfg.iterations; ++it) {
    // Assignment: candidate from the expanded-norm product, confirmed with
    // exact distances against the previous assignment so the objective
    // cannot increase through rounding.
    const Eigen::VectorXf c_norms = c.rowwise().squaredNorm();
    FloatMatrix scores = x * c.transpose();
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      float best_d = std::numeric_limits<float>::infinity();
      for (Eigen::Index j = 0; j < c.rows(); ++j) {
        const float dj = x_norms(i) - 2.0f * scores(i, j) + c_norms(j);
        if (dj < best_d) {
          best_d = dj;
          best = static_cast<int>(j);
        }
      }
      double exact = l2_sq(row_span(x, i), row_span(c, best));
      const int prev = result.assignment[i];
      if (prev >= 0 && prev != best) {
        const double prev_d = l2_sq(row_span(x, i), row_span(c, prev));
        if (prev_d < exact || (prev_d == exact && prev < best)) {
          best = prev;
          exact = prev_d;
        }
      }
      result.assignment[i] = best;
      dist[i] = exact;
      objective += exact;
    }
    result.objective.push_back(objective);

    // Update.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(c.rows(), d);
    std::vector<std::size_t> counts(static_cast<std::size_t>(c.rows()), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(result.assignment[i]) += x.row(i).cast<double>();
      ++counts[result.assignment[i]];
    }
    std::vector<Eigen::Index> far_order;
    std::size_t next_far = 0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      if (counts[j] > 0) {
        c.row(j) = (sums.row(j) / static_cast<double>(counts[j])).cast<float>();
        continue;
      }
      if (far_order.empty()) {
        far_order.resize(static_cast<std::size_t>(n));
        std::iota(far_order.begin(), far_order.end(), 0);
        std::stable_sort(far_order.begin(), far_order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return dist[a] > dist[b]; });
      }
      const Eigen::Index p = far_order[next_far % far_order.size()];
      ++next_far;
      c.row(j) = x.row(p);
    }
  }
  return result;
}

}  // namespace gnnfp
