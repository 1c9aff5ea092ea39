// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mrt/entropy_coder.hpp"
#include "mrt/model.hpp"

namespace mrt {

/// Quantized symbols of one image as both codec sides see them.
struct LatentSymbols {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::vector<std::int64_t> y_hat;  // [tokens x c_y], row-major
  LfqCode z_hat;
};

struct CompressResult {
  std::vector<std::uint8_t> bitstream;
  BitstreamHeader header;
  LatentSymbols symbols;
  /// Cost of the coded symbols under the quantized tables, in bits.
  double estimated_hyper_bits = 0.0;
  double estimated_latent_bits = 0.0;

  std::size_t payload_bits() const { return 8 * (static_cast<std::size_t>(header.hyper_bytes) + header.latent_bytes); }
  double estimated_bits() const { return estimated_hyper_bits + estimated_latent_bits; }
  /// Whole bitstream (header included) per original pixel.
  double bpp() const;
};

struct DecompressResult {
  Tensor image;  // [3 x orig_h x orig_w], clamped to [0, 1]
  BitstreamHeader header;
  LatentSymbols symbols;
};

/// Image [3 x H x W] in [0, 1]; dims that are not multiples of the window
/// size are reflection-padded. `lambda_index` is recorded in the header.
CompressResult compress(const MrtModel& model, const Tensor& image, std::uint8_t lambda_index = 0);
DecompressResult decompress(const MrtModel& model, std::span<const std::uint8_t> bitstream);

/// The entropy-coding stage alone: hyper bits under the Bernoulli prior,
/// then y_hat slice by slice under the context model.
struct CodedPayloads {
  std::vector<std::uint8_t> hyper;
  std::vector<std::uint8_t> latent;
  double hyper_bits = 0.0;
  double latent_bits = 0.0;
};
CodedPayloads encode_latent_symbols(const RcmParams& rcm, const LatentSymbols& symbols);
LatentSymbols decode_latent_symbols(const RcmParams& rcm, std::span<const std::uint8_t> hyper,
                                    std::span<const std::uint8_t> latent, std::size_t tokens,
                                    std::size_t channels, std::size_t hyper_channels);

}  // namespace mrt
