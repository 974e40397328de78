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

#include <fstream>
#include <map>
#include <stdexcept>

#include "gnnfp/binary_io.hpp"
#include "gnnfp/encoder.hpp"

namespace gnnfp {

void save_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                     const nlohmann::json& extra) {
  std::vector<std::pair<std::string, nn::Param<float>*>> tensors;
  encoder.visit([&](const std::string& name, nn::Param<float>& p) {
    tensors.emplace_back(name, &p);
  });

  nlohmann::json header = {{"encoder", encoder.config().to_json()}};
  if (!extra.is_null()) header["extra"] = extra;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    BinaryWriter w(out);
    w.bytes("GFPM", 4);
    w.u16(kCheckpointVersion);
    w.string(header.dump());
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, p] : tensors) {
      w.string(name);
      w.u8(2);
      w.u32(static_cast<std::uint32_t>(p->value.rows()));
      w.u32(static_cast<std::uint32_t>(p->value.cols()));
      w.array(std::span<const float>(p->value.data(), static_cast<std::size_t>(p->value.size())));
    }
    if (!out) throw std::runtime_error(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Encoder<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open checkpoint");
  BinaryReader r(in);
  r.expect_magic("GFPM");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                             std::to_string(version));
  }
  const nlohmann::json header = nlohmann::json::parse(r.string());
  if (extra) *extra = header.value("extra", nlohmann::json{});

  std::map<std::string, nn::Mat<float>> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const std::uint8_t rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    nn::Index rows = 1, cols = 1;
    if (rank == 1) {
      cols = dims[0];
    } else if (rank == 2) {
      rows = dims[0];
      cols = dims[1];
    } else {
      for (std::size_t k = 0; k + 1 < dims.size(); ++k) rows *= dims[k];
      cols = dims.back();
    }
    nn::Mat<float> m(rows, cols);
    r.array(std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
    stored.emplace(std::move(name), std::move(m));
  }

  Encoder<float> encoder(EncoderConfig::from_json(header.at("encoder")));
  encoder.visit([&](const std::string& name, nn::Param<float>& p) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw std::runtime_error(path.string() + ": missing tensor '" + name + "'");
    }
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw std::runtime_error(path.string() + ": shape mismatch for tensor '" + name + "'");
    }
    p.value = it->second;
    stored.erase(it);
  });
  if (!stored.empty()) {
    throw std::runtime_error(path.string() + ": unexpected tensor '" + stored.begin()->first + "'");
  }
  return encoder;
}

}  // namespace gnnfp
