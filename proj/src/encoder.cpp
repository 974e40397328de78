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

#include "gnnfp/encoder.hpp"

#include <stdexcept>

namespace gnnfp {

namespace {

int strided(int size, int stride) { return (size - 1) / stride + 1; }

}  // namespace

std::pair<int, int> EncoderConfig::stem_output_hw() const {
  int h = input_height, w = input_width;
  for (const auto& [sh, sw] : stem_strides) {
    h = strided(h, sh);
    w = strided(w, sw);
  }
  return {h, w};
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("encoder config: " + what);
  };
  if (input_height < 1 || input_width < 1) fail("input size must be positive");
  if (stem_channels.size() != stem_strides.size()) {
    fail("stem_channels and stem_strides differ in length");
  }
  for (std::size_t i = 0; i < stem_channels.size(); ++i) {
    if (stem_channels[i] < 1) fail("stem channel counts must be positive");
    if (stem_strides[i].first < 1 || stem_strides[i].second < 1) fail("strides must be >= 1");
  }
  if (node_dim < 1 || embed_dim < 1 || ffn_expansion < 1) fail("dimensions must be positive");
  if (k < 1) fail("k must be >= 1");
  if (stages.empty()) fail("at least one stage is required");

  auto [h, w] = stem_output_hw();
  int channels = node_dim;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageConfig& sc = stages[s];
    if (sc.blocks < 0) fail("negative block count");
    if (sc.channels != channels) {
      fail("stage " + std::to_string(s) + " expects " + std::to_string(sc.channels) +
           " channels but receives " + std::to_string(channels));
    }
    if (sc.blocks > 0 && h * w <= k) {
      fail("stage " + std::to_string(s) + " has " + std::to_string(h * w) +
           " nodes, need more than k=" + std::to_string(k));
    }
    if (sc.downsample) {
      if (h < 2 || w < 2) fail("grid too small to downsample at stage " + std::to_string(s));
      h = strided(h, 2);
      w = strided(w, 2);
      if (s + 1 < stages.size()) channels = stages[s + 1].channels;
    }
  }
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages) {
    stages_json.push_back({{"blocks", s.blocks}, {"channels", s.channels}, {"downsample", s.downsample}});
  }
  nlohmann::json strides = nlohmann::json::array();
  for (const auto& [sh, sw] : stem_strides) strides.push_back({sh, sw});
  return {
      {"input_height", input_height},
      {"input_width", input_width},
      {"stem_channels", stem_channels},
      {"stem_strides", strides},
      {"node_dim", node_dim},
      {"k", k},
      {"stages", stages_json},
      {"embed_dim", embed_dim},
      {"ffn_expansion", ffn_expansion},
      {"activation", activation == nn::Activation::kGelu ? "gelu" : "relu"},
      {"batch_norm", batch_norm},
      {"knn_after_input_fc", knn_after_input_fc},
      {"seed", seed},
  };
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.stem_channels = j.value("stem_channels", c.stem_channels);
  if (j.contains("stem_strides")) {
    c.stem_strides.clear();
    for (const auto& s : j.at("stem_strides")) c.stem_strides.emplace_back(s.at(0), s.at(1));
  }
  c.node_dim = j.value("node_dim", c.node_dim);
  c.k = j.value("k", c.k);
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("blocks"), s.at("channels"), s.at("downsample")});
    }
  }
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
  const std::string act = j.value("activation", std::string("gelu"));
  if (act == "gelu") {
    c.activation = nn::Activation::kGelu;
  } else if (act == "relu") {
    c.activation = nn::Activation::kRelu;
  } else {
    throw std::invalid_argument("encoder config: unknown activation '" + act + "'");
  }
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.knn_after_input_fc = j.value("knn_after_input_fc", c.knn_after_input_fc);
  c.seed = j.value("seed", c.seed);
  return c;
}

template KnnGraph build_knn_graph<float>(const nn::Mat<float>&, int);
template KnnGraph build_knn_graph<double>(const nn::Mat<double>&, int);

template class Encoder<float>;
template class Encoder<double>;

}  // namespace gnnfp
