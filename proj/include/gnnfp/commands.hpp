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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/audio.hpp"
#include "gnnfp/augment.hpp"
#include "gnnfp/encoder.hpp"
#include "gnnfp/features.hpp"
#include "gnnfp/index.hpp"
#include "gnnfp/retrieval.hpp"
#include "gnnfp/training.hpp"

namespace gnnfp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Invalid or inconsistent configuration (exit 2).
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline. Sub-seeds for training, encoder init and
/// index training derive from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  SegmentSpec segment;
  MelConfig mel;
  AugmentConfig augment;
  EncoderConfig encoder;
  TrainConfig train;
  IndexConfig index;
  IdentifyOptions identify;
  double margin_ms = 50.0;

  /// Fills derived fields (mel segment length, encoder input size, index dim,
  /// sub-seeds) and validates. Throws ConfigError.
  void finalize();
};

/// Entry point of the `gnnfp` tool. Output goes to `out`, logs to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gnnfp
