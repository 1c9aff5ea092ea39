// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrt/birwkv.hpp"
#include "mrt/local_vit.hpp"
#include "mrt/nn.hpp"

namespace mrt {

struct ModelConfig {
  std::size_t patch_size = 16;
  std::size_t window_side = 16;  // patch tokens per window side
  std::size_t latents_per_window = 32;
  std::size_t channels = 64;     // token width c
  std::size_t transform_layers = 2;
  std::size_t vit_blocks_per_layer = 4;
  std::size_t rwkv_blocks_per_layer = 1;
  std::size_t heads = 2;
  std::size_t ratio = 4;
  std::size_t latent_channels = 32;  // c_y
  std::size_t hyper_channels = 6;    // c_z
  std::size_t generator_channels = 16;
  std::size_t target_codebook = 64;  // classes of the stage-1 alignment targets
  std::size_t target_block = 8;      // pixel block size of the alignment targets
  std::uint64_t seed = 0;

  /// Desk-scale defaults used by the CLI.
  static ModelConfig desk();
  /// Widths of the published configuration (d=1024, c_y=320, c_z=14).
  static ModelConfig full();
  /// The narrowest configuration that still has every component; for tests
  /// and quick training runs.
  static ModelConfig tiny();

  std::size_t window_pixels() const { return patch_size * window_side; }
  std::size_t patch_tokens_per_window() const { return window_side * window_side; }
  std::size_t tokens_per_window() const { return patch_tokens_per_window() + latents_per_window; }
  void validate() const;

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// Patch-token grid of an image and its window tiling.
struct WindowGrid {
  std::size_t height = 0;  // pixels
  std::size_t width = 0;
  std::size_t grid_h = 0;  // patch tokens
  std::size_t grid_w = 0;
  std::size_t windows_y = 0;
  std::size_t windows_x = 0;

  std::size_t windows() const { return windows_y * windows_x; }
  std::size_t patch_tokens() const { return grid_h * grid_w; }
  /// Window holding pixel (y, x), row-major window order.
  std::size_t window_of_pixel(std::size_t y, std::size_t x, const ModelConfig& cfg) const;
};

/// Throws ShapeError unless both dims are multiples of the window size.
WindowGrid window_grid(const ModelConfig& cfg, std::size_t height, std::size_t width);
/// Grid for `latent_count` tokens laid out over (height, width).
WindowGrid grid_for_latents(const ModelConfig& cfg, std::size_t latent_count, std::size_t height,
                            std::size_t width);

enum class TokenLayout { kWindowed, kLatent, kRaster };

struct TokenSequence {
  Tensor data;  // [n_windows * tokens_per_window x c]
  std::size_t n_windows = 0;
  std::size_t tokens_per_window = 0;
  TokenLayout layout = TokenLayout::kWindowed;

  TokenSequence() = default;
  TokenSequence(Tensor d, std::size_t windows, std::size_t per_window, TokenLayout l);
  Tensor window(std::size_t i) const { return slice_rows(data, i * tokens_per_window, tokens_per_window); }
};

struct PatchEmbedParams {
  Linear proj;  // 3*p*p -> c; a stride-p, kernel-p convolution

  static PatchEmbedParams init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct TransformLayerParams {
  std::vector<BiRwkvBlockParams> rwkv;
  std::vector<VitBlockParams> vit;

  static TransformLayerParams init(const ModelConfig& cfg, Rng& rng);
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Two transposed-convolution stages (kernel = stride) with GELU between.
struct PixelGeneratorParams {
  std::size_t first_factor = 4;
  Linear stage1;  // c -> f1^2 * g
  Linear stage2;  // g -> f2^2 * 3

  static PixelGeneratorParams init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MrtEncoderParams {
  PatchEmbedParams embed;
  Tensor latent_embedding;  // [latents_per_window x c]
  std::vector<TransformLayerParams> layers;

  static MrtEncoderParams init(const ModelConfig& cfg, Rng& rng);
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MrtDecoderParams {
  Tensor mask_token;  // [1 x c]
  std::vector<TransformLayerParams> layers;
  PixelGeneratorParams generator;

  static MrtDecoderParams init(const ModelConfig& cfg, Rng& rng);
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// [3 x H x W] -> [(H/p * W/p) x c] in raster order.
Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p, const ModelConfig& cfg);
/// Raster patch tokens [(H/p * W/p) x c] -> [3 x H x W]. Unclamped.
Tensor pixel_generate(const Tensor& tokens, const PixelGeneratorParams& p, const WindowGrid& grid,
                      const ModelConfig& cfg);

/// For each windowed slot, the raster patch token it reads or, for latent
/// slots, patch_tokens() + latent slot index.
std::vector<std::size_t> window_slot_sources(const WindowGrid& grid, const ModelConfig& cfg);

TokenSequence partition_and_append(const Tensor& tokens, const Tensor& latent_embedding, const WindowGrid& grid,
                                   const ModelConfig& cfg);
/// Drops the latent slots and restores raster token order.
Tensor unpartition(const TokenSequence& seq, const WindowGrid& grid, const ModelConfig& cfg);
/// The latent slots of every window, concatenated in window order.
TokenSequence extract_latents(const TokenSequence& seq, const ModelConfig& cfg);

/// Bi-RWKV over the concatenated windows, then the ViT blocks per window.
TokenSequence one_d_transform_layer(const TokenSequence& seq, const TransformLayerParams& p);

Tensor encode_to_latents(const Tensor& image, const MrtEncoderParams& p, const ModelConfig& cfg);
/// Decoder transform up to the raster patch tokens fed to the pixel generator.
Tensor decode_tokens(const Tensor& latents, const MrtDecoderParams& p, const WindowGrid& grid,
                     const ModelConfig& cfg);
Tensor decode_from_latents(const Tensor& latents, const MrtDecoderParams& p, std::size_t height,
                           std::size_t width, const ModelConfig& cfg);

}  // namespace mrt
