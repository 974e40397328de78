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

// Shared helpers for unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gnnfp/encoder.hpp"
#include "gnnfp/index.hpp"
#include "gnnfp/training.hpp"

namespace gnnfp::test {

using nn::Mat;

template <typename T = double>
Mat<T> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
  return m;
}

inline Mat<double> normalize_rows(Mat<double> m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gnnfp_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename Module>
std::vector<nn::Param<double>*> trainable(Module& m) {
  std::vector<nn::Param<double>*> out;
  m.visit("m", [&](const std::string&, nn::Param<double>& p) {
    if (!p.buffer) out.push_back(&p);
  });
  return out;
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central finite differences of L = sum(R .* f(x)) for a fixed random R,
/// against the analytic input and parameter gradients. Relative error is
/// |a - n| / max(|a|, |n|, floor).
template <typename Forward, typename Analytic>
GradCheck finite_difference_check(Mat<double>& x, const std::vector<nn::Param<double>*>& params,
                                  Forward&& forward, Analytic&& analytic, std::uint64_t seed,
                                  double step = 1e-4, double floor = 1e-6) {
  const Mat<double> y0 = forward(x);
  const Mat<double> r = random_matrix(y0.rows(), y0.cols(), seed);
  auto loss = [&] { return (forward(x).array() * r.array()).sum(); };

  for (auto* p : params) p->zero_grad();
  const Mat<double> dx = analytic(x, r);

  GradCheck out;
  auto compare = [&](double a, double& slot, const std::string& where) {
    const double saved = slot;
    slot = saved + step;
    const double lp = loss();
    slot = saved - step;
    const double lm = loss();
    slot = saved;
    const double num = (lp - lm) / (2.0 * step);
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
    ++out.checked;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = where + " analytic " + std::to_string(a) + " numeric " + std::to_string(num);
    }
  };
  // An empty analytic input gradient skips the input check.
  if (dx.size() == x.size()) {
    for (Eigen::Index i = 0; i < x.size(); ++i) compare(dx.data()[i], x.data()[i], "input[" + std::to_string(i) + "]");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    // Gradients were accumulated before perturbation; copy them first.
    const Mat<double> g = params[p]->grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      compare(g.data()[i], params[p]->value.data()[i],
              "param" + std::to_string(p) + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

/// Unit vectors drawn around `clusters` random centres.
inline FloatMatrix clustered_unit_vectors(int n, int dim, int clusters, double spread, std::uint64_t seed,
                                          std::vector<int>* labels = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  FloatMatrix centres(clusters, dim);
  for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = g(rng);
  centres.rowwise().normalize();
  FloatMatrix out(n, dim);
  std::uniform_int_distribution<int> pick(0, clusters - 1);
  if (labels) labels->resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = pick(rng);
    if (labels) (*labels)[i] = c;
    for (int d = 0; d < dim; ++d) out(i, d) = centres(c, d) + static_cast<float>(spread) * g(rng);
    out.row(i).normalize();
  }
  return out;
}

}  // namespace gnnfp::test
