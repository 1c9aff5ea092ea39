// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mrt/config.hpp"
#include "mrt/mrt_transform.hpp"
#include "mrt/rcm.hpp"

namespace mrt {

/// Rate weights of the four published operating points, by lambda index.
inline constexpr std::array<double, 4> kLambdaTable = {20.0, 10.0, 5.0, 2.5};

/// Every trainable part of the codec. The auxiliary head maps decoder patch
/// tokens to logits over the alignment codebook, one set per target block
/// inside the patch; it is used by stage-1 training only.
struct MrtModel {
  ModelConfig config;
  MrtEncoderParams encoder;
  MrtDecoderParams decoder;
  RcmParams rcm;
  Linear aux_head;
  /// Free-form key=value metadata persisted in checkpoints (stage, lambda).
  KeyValues metadata;

  static MrtModel init(const ModelConfig& cfg);
  /// Target blocks per patch token: (patch_size / target_block)^2.
  std::size_t aux_blocks_per_token() const;

  ParamList encoder_params() const;
  ParamList decoder_params() const;
  ParamList rcm_params() const;
  ParamList aux_params() const;
  ParamList all_params() const;

  /// Lambda index stored in the metadata, or -1 when absent.
  int lambda_index() const;
};

/// Versioned little-endian checkpoint: magic, version, config text, metadata
/// text, then named float64 blobs with their shapes.
std::vector<std::uint8_t> serialize_checkpoint(const MrtModel& model);
MrtModel deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const MrtModel& model);
MrtModel load_checkpoint(const std::string& path);

}  // namespace mrt
