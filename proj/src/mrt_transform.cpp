// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/mrt_transform.hpp"

#include <algorithm>
#include <sstream>

#include "mrt/config.hpp"

namespace mrt {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.channels = 1024;
  c.heads = 8;
  c.latent_channels = 320;
  c.hyper_channels = 14;
  c.generator_channels = 64;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.channels = 16;
  c.transform_layers = 1;
  c.vit_blocks_per_layer = 1;
  c.heads = 2;
  c.latent_channels = 16;
  c.hyper_channels = 6;
  c.generator_channels = 8;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("model config: " + msg); };
  if (patch_size == 0 || patch_size % 4 != 0) fail("patch_size must be a positive multiple of 4");
  if (window_side == 0 || latents_per_window == 0) fail("window_side and latents_per_window must be positive");
  if (channels == 0 || heads == 0 || channels % heads != 0) fail("heads must divide channels");
  if (ratio == 0) fail("ratio must be positive");
  if (latent_channels < 2 || latent_channels % 2 != 0) fail("latent_channels must be even");
  if (hyper_channels == 0 || hyper_channels > 16) fail("hyper_channels must lie in [1, 16]");
  if (generator_channels == 0) fail("generator_channels must be positive");
  if (target_block == 0 || patch_size % target_block != 0) fail("target_block must divide patch_size");
  if (target_codebook < 2) fail("target_codebook must be at least 2");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "patch_size = " << patch_size << '\n'
     << "window_side = " << window_side << '\n'
     << "latents_per_window = " << latents_per_window << '\n'
     << "channels = " << channels << '\n'
     << "transform_layers = " << transform_layers << '\n'
     << "vit_blocks_per_layer = " << vit_blocks_per_layer << '\n'
     << "rwkv_blocks_per_layer = " << rwkv_blocks_per_layer << '\n'
     << "heads = " << heads << '\n'
     << "ratio = " << ratio << '\n'
     << "latent_channels = " << latent_channels << '\n'
     << "hyper_channels = " << hyper_channels << '\n'
     << "generator_channels = " << generator_channels << '\n'
     << "target_codebook = " << target_codebook << '\n'
     << "target_block = " << target_block << '\n'
     << "model_seed = " << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text);
  const std::string preset = kv.get("preset", "desk");
  ModelConfig c;
  if (preset == "tiny") {
    c = tiny();
  } else if (preset == "full") {
    c = full();
  } else if (preset != "desk") {
    throw Error("model config: unknown preset '" + preset + "'");
  }
  auto size = [&](const char* key, std::size_t& field) {
    const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(field));
    if (v < 0) throw Error(std::string("model config: negative ") + key);
    field = static_cast<std::size_t>(v);
  };
  size("patch_size", c.patch_size);
  size("window_side", c.window_side);
  size("latents_per_window", c.latents_per_window);
  size("channels", c.channels);
  size("transform_layers", c.transform_layers);
  size("vit_blocks_per_layer", c.vit_blocks_per_layer);
  size("rwkv_blocks_per_layer", c.rwkv_blocks_per_layer);
  size("heads", c.heads);
  size("ratio", c.ratio);
  size("latent_channels", c.latent_channels);
  size("hyper_channels", c.hyper_channels);
  size("generator_channels", c.generator_channels);
  size("target_codebook", c.target_codebook);
  size("target_block", c.target_block);
  c.seed = static_cast<std::uint64_t>(kv.get_int("model_seed", static_cast<std::int64_t>(c.seed)));
  c.validate();
  return c;
}

std::size_t WindowGrid::window_of_pixel(std::size_t y, std::size_t x, const ModelConfig& cfg) const {
  return (y / cfg.window_pixels()) * windows_x + x / cfg.window_pixels();
}

WindowGrid window_grid(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  const std::size_t wp = cfg.window_pixels();
  if (height == 0 || width == 0 || height % wp != 0 || width % wp != 0) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a multiple of the " + std::to_string(wp) + "-pixel window");
  }
  WindowGrid g;
  g.height = height;
  g.width = width;
  g.grid_h = height / cfg.patch_size;
  g.grid_w = width / cfg.patch_size;
  g.windows_y = g.grid_h / cfg.window_side;
  g.windows_x = g.grid_w / cfg.window_side;
  return g;
}

WindowGrid grid_for_latents(const ModelConfig& cfg, std::size_t latent_count, std::size_t height,
                            std::size_t width) {
  const WindowGrid g = window_grid(cfg, height, width);
  if (latent_count % cfg.latents_per_window != 0 || latent_count / cfg.latents_per_window != g.windows()) {
    throw ShapeError(std::to_string(latent_count) + " latent tokens do not match " + std::to_string(g.windows()) +
                     " windows of a " + std::to_string(height) + "x" + std::to_string(width) + " image");
  }
  return g;
}

TokenSequence::TokenSequence(Tensor d, std::size_t windows, std::size_t per_window, TokenLayout l)
    : data(std::move(d)), n_windows(windows), tokens_per_window(per_window), layout(l) {
  if (data.rows() != n_windows * tokens_per_window) {
    throw ShapeError("token sequence: " + to_string(data.shape()) + " is not " + std::to_string(n_windows) +
                     " windows of " + std::to_string(tokens_per_window));
  }
}

PatchEmbedParams PatchEmbedParams::init(const ModelConfig& cfg, Rng& rng) {
  return PatchEmbedParams{Linear::init(3 * cfg.patch_size * cfg.patch_size, cfg.channels, rng)};
}

void PatchEmbedParams::collect(const std::string& prefix, ParamList& out) const { proj.collect(prefix + ".proj", out); }

TransformLayerParams TransformLayerParams::init(const ModelConfig& cfg, Rng& rng) {
  TransformLayerParams p;
  for (std::size_t i = 0; i < cfg.rwkv_blocks_per_layer; ++i) {
    p.rwkv.push_back(BiRwkvBlockParams::init(cfg.channels, cfg.ratio, rng));
  }
  for (std::size_t i = 0; i < cfg.vit_blocks_per_layer; ++i) {
    p.vit.push_back(VitBlockParams::init(cfg.channels, cfg.heads, cfg.ratio, cfg.tokens_per_window(), rng));
  }
  return p;
}

void TransformLayerParams::zero_output_projections() {
  for (auto& b : rwkv) b.zero_output_projections();
  for (auto& b : vit) b.zero_output_projections();
}

void TransformLayerParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < rwkv.size(); ++i) rwkv[i].collect(prefix + ".rwkv" + std::to_string(i), out);
  for (std::size_t i = 0; i < vit.size(); ++i) vit[i].collect(prefix + ".vit" + std::to_string(i), out);
}

PixelGeneratorParams PixelGeneratorParams::init(const ModelConfig& cfg, Rng& rng) {
  PixelGeneratorParams p;
  p.first_factor = 4;
  const std::size_t f2 = cfg.patch_size / p.first_factor;
  p.stage1 = Linear::init(cfg.channels, p.first_factor * p.first_factor * cfg.generator_channels, rng);
  p.stage2 = Linear::init(cfg.generator_channels, f2 * f2 * 3, rng);
  std::ranges::fill(p.stage2.bias.mutable_data(), 0.5);
  return p;
}

void PixelGeneratorParams::collect(const std::string& prefix, ParamList& out) const {
  stage1.collect(prefix + ".stage1", out);
  stage2.collect(prefix + ".stage2", out);
}

MrtEncoderParams MrtEncoderParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  MrtEncoderParams p;
  p.embed = PatchEmbedParams::init(cfg, rng);
  p.latent_embedding = randn({cfg.latents_per_window, cfg.channels}, 0.02, rng);
  for (std::size_t i = 0; i < cfg.transform_layers; ++i) p.layers.push_back(TransformLayerParams::init(cfg, rng));
  return p;
}

void MrtEncoderParams::zero_output_projections() {
  for (auto& l : layers) l.zero_output_projections();
}

void MrtEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  embed.collect(prefix + ".embed", out);
  out.add(prefix + ".latent_embedding", latent_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
}

MrtDecoderParams MrtDecoderParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  MrtDecoderParams p;
  p.mask_token = randn({1, cfg.channels}, 0.02, rng);
  for (std::size_t i = 0; i < cfg.transform_layers; ++i) p.layers.push_back(TransformLayerParams::init(cfg, rng));
  p.generator = PixelGeneratorParams::init(cfg, rng);
  return p;
}

void MrtDecoderParams::zero_output_projections() {
  for (auto& l : layers) l.zero_output_projections();
}

void MrtDecoderParams::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".mask_token", mask_token);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  generator.collect(prefix + ".generator", out);
}

Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("patch_embed: expects a [3 x H x W] image, got " + to_string(image.shape()));
  }
  window_grid(cfg, image.dim(1), image.dim(2));
  return p.proj(patchify(image, cfg.patch_size));
}

Tensor pixel_generate(const Tensor& tokens, const PixelGeneratorParams& p, const WindowGrid& grid,
                      const ModelConfig& cfg) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid.patch_tokens() || tokens.dim(1) != cfg.channels) {
    throw ShapeError("pixel_generate: tokens " + to_string(tokens.shape()) + " do not match the " +
                     std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) + " grid");
  }
  const std::size_t f1 = p.first_factor;
  const std::size_t f2 = cfg.patch_size / f1;
  const std::size_t g = cfg.generator_channels;
  const std::size_t h1 = grid.grid_h * f1;
  const std::size_t w1 = grid.grid_w * f1;
  const Tensor up1 = gelu(unpatchify(p.stage1(tokens), g, h1, w1, f1));
  return unpatchify(p.stage2(patchify(up1, 1)), 3, grid.height, grid.width, f2);
}

std::vector<std::size_t> window_slot_sources(const WindowGrid& grid, const ModelConfig& cfg) {
  const std::size_t ws = cfg.window_side;
  const std::size_t tpw = cfg.tokens_per_window();
  std::vector<std::size_t> src(grid.windows() * tpw);
  for (std::size_t wy = 0; wy < grid.windows_y; ++wy) {
    for (std::size_t wx = 0; wx < grid.windows_x; ++wx) {
      const std::size_t base = (wy * grid.windows_x + wx) * tpw;
      for (std::size_t s = 0; s < ws * ws; ++s) {
        src[base + s] = (wy * ws + s / ws) * grid.grid_w + (wx * ws + s % ws);
      }
      for (std::size_t j = 0; j < cfg.latents_per_window; ++j) src[base + ws * ws + j] = grid.patch_tokens() + j;
    }
  }
  return src;
}

TokenSequence partition_and_append(const Tensor& tokens, const Tensor& latent_embedding, const WindowGrid& grid,
                                   const ModelConfig& cfg) {
  if (tokens.rows() != grid.patch_tokens()) {
    throw ShapeError("partition: " + std::to_string(tokens.rows()) + " tokens do not fill a " +
                     std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) + " grid");
  }
  if (latent_embedding.rows() != cfg.latents_per_window) throw ShapeError("partition: latent embedding rows");
  const auto src = window_slot_sources(grid, cfg);
  return TokenSequence(gather_rows(concat_rows({tokens, latent_embedding}), src), grid.windows(),
                       cfg.tokens_per_window(), TokenLayout::kWindowed);
}

Tensor unpartition(const TokenSequence& seq, const WindowGrid& grid, const ModelConfig& cfg) {
  if (seq.layout != TokenLayout::kWindowed) throw ShapeError("unpartition: sequence is not windowed");
  const auto src = window_slot_sources(grid, cfg);
  std::vector<std::size_t> inverse(grid.patch_tokens());
  for (std::size_t slot = 0; slot < src.size(); ++slot) {
    if (src[slot] < grid.patch_tokens()) inverse[src[slot]] = slot;
  }
  return gather_rows(seq.data, inverse);
}

TokenSequence extract_latents(const TokenSequence& seq, const ModelConfig& cfg) {
  if (seq.layout != TokenLayout::kWindowed) throw ShapeError("extract_latents: sequence is not windowed");
  std::vector<std::size_t> idx;
  idx.reserve(seq.n_windows * cfg.latents_per_window);
  for (std::size_t n = 0; n < seq.n_windows; ++n) {
    for (std::size_t j = 0; j < cfg.latents_per_window; ++j) {
      idx.push_back(n * seq.tokens_per_window + cfg.patch_tokens_per_window() + j);
    }
  }
  return TokenSequence(gather_rows(seq.data, idx), seq.n_windows, cfg.latents_per_window, TokenLayout::kLatent);
}

TokenSequence one_d_transform_layer(const TokenSequence& seq, const TransformLayerParams& p) {
  if (seq.layout != TokenLayout::kWindowed) throw ShapeError("transform layer: sequence is not windowed");
  Tensor global = seq.data;
  for (const auto& block : p.rwkv) global = bi_rwkv_block(global, block);
  if (p.vit.empty()) return TokenSequence(global, seq.n_windows, seq.tokens_per_window, seq.layout);
  const TokenSequence staged(global, seq.n_windows, seq.tokens_per_window, seq.layout);
  std::vector<Tensor> windows;
  windows.reserve(seq.n_windows);
  for (std::size_t n = 0; n < seq.n_windows; ++n) {
    Tensor w = staged.window(n);
    for (const auto& block : p.vit) w = vit_block(w, block);
    windows.push_back(std::move(w));
  }
  return TokenSequence(concat_rows(windows), seq.n_windows, seq.tokens_per_window, seq.layout);
}

Tensor encode_to_latents(const Tensor& image, const MrtEncoderParams& p, const ModelConfig& cfg) {
  const WindowGrid grid = window_grid(cfg, image.dim(1), image.dim(2));
  TokenSequence seq = partition_and_append(patch_embed(image, p.embed, cfg), p.latent_embedding, grid, cfg);
  for (const auto& layer : p.layers) seq = one_d_transform_layer(seq, layer);
  return extract_latents(seq, cfg).data;
}

Tensor decode_tokens(const Tensor& latents, const MrtDecoderParams& p, const WindowGrid& grid,
                     const ModelConfig& cfg) {
  if (latents.rank() != 2 || latents.dim(1) != cfg.channels ||
      latents.dim(0) != grid.windows() * cfg.latents_per_window) {
    throw ShapeError("decode: latents " + to_string(latents.shape()) + " inconsistent with " +
                     std::to_string(grid.windows()) + " windows");
  }
  const std::size_t tpw = cfg.tokens_per_window();
  const std::size_t patch = cfg.patch_tokens_per_window();
  std::vector<std::size_t> src(grid.windows() * tpw, 0);
  for (std::size_t n = 0; n < grid.windows(); ++n) {
    for (std::size_t j = 0; j < cfg.latents_per_window; ++j) {
      src[n * tpw + patch + j] = 1 + n * cfg.latents_per_window + j;
    }
  }
  TokenSequence seq(gather_rows(concat_rows({p.mask_token, latents}), src), grid.windows(), tpw,
                    TokenLayout::kWindowed);
  for (const auto& layer : p.layers) seq = one_d_transform_layer(seq, layer);
  return unpartition(seq, grid, cfg);
}

Tensor decode_from_latents(const Tensor& latents, const MrtDecoderParams& p, std::size_t height,
                           std::size_t width, const ModelConfig& cfg) {
  const WindowGrid grid = grid_for_latents(cfg, latents.rows(), height, width);
  return pixel_generate(decode_tokens(latents, p, grid, cfg), p.generator, grid, cfg);
}

}  // namespace mrt
