// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/codec.hpp"

#include <algorithm>

#include "mrt/image_io.hpp"

namespace mrt {

namespace {

Tensor to_tensor(const LatentSymbols& s) {
  std::vector<double> v(s.y_hat.begin(), s.y_hat.end());
  return Tensor(Shape{s.tokens, s.channels}, std::move(v));
}

std::vector<QuantizedCdf> hyper_tables(const Tensor& logits) {
  std::vector<QuantizedCdf> t;
  for (double l : logits.data()) t.push_back(bernoulli_cdf(l));
  return t;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw Error(std::string("compress: ") + what + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

double CompressResult::bpp() const {
  return 8.0 * static_cast<double>(bitstream.size()) /
         (static_cast<double>(header.orig_width) * static_cast<double>(header.orig_height));
}

CodedPayloads encode_latent_symbols(const RcmParams& rcm, const LatentSymbols& symbols) {
  const std::size_t n = symbols.tokens;
  const std::size_t cy = symbols.channels;
  CodedPayloads out;

  RangeEncoder hyper_enc;
  const auto tables = hyper_tables(rcm.hyper_logits);
  if (tables.size() != symbols.z_hat.dims) throw ShapeError("codec: hyper width mismatch");
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t d = 0; d < symbols.z_hat.dims; ++d) {
      const std::size_t bit = symbols.z_hat.signs[t * symbols.z_hat.dims + d] > 0 ? 1 : 0;
      hyper_enc.encode_symbol(tables[d], bit);
      out.hyper_bits += tables[d].bits(bit);
    }
  }
  out.hyper = hyper_enc.finish();

  ScctxSchedule schedule(hyper_synthesis(symbols.z_hat.to_tensor(), rcm), rcm);
  const Tensor values = to_tensor(symbols);
  RangeEncoder latent_enc;
  for (std::size_t slice = 0; slice < kScctxStages; ++slice) {
    const EntropyParams ep = schedule.params_for(slice);
    const auto mask = scctx_slice_mask(slice, n, cy);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const FixedGaussian g = FixedGaussian::quantize(ep.mu[i], ep.sigma[i]);
      out.latent_bits += encode_gaussian_value(latent_enc, symbols.y_hat[i], g);
    }
    schedule.commit(slice, values.data());
  }
  out.latent = latent_enc.finish();
  return out;
}

LatentSymbols decode_latent_symbols(const RcmParams& rcm, std::span<const std::uint8_t> hyper,
                                    std::span<const std::uint8_t> latent, std::size_t tokens,
                                    std::size_t channels, std::size_t hyper_channels) {
  LatentSymbols s;
  s.tokens = tokens;
  s.channels = channels;
  s.z_hat.tokens = tokens;
  s.z_hat.dims = hyper_channels;
  s.z_hat.signs.resize(tokens * hyper_channels);

  const auto tables = hyper_tables(rcm.hyper_logits);
  if (tables.size() != hyper_channels) throw DecodeError("codec: hyper width does not match the model");
  RangeDecoder hyper_dec(hyper);
  for (std::size_t i = 0; i < s.z_hat.signs.size(); ++i) {
    s.z_hat.signs[i] = hyper_dec.decode_symbol(tables[i % hyper_channels]) == 1 ? 1 : -1;
  }
  hyper_dec.finish();

  ScctxSchedule schedule(hyper_synthesis(s.z_hat.to_tensor(), rcm), rcm);
  s.y_hat.assign(tokens * channels, 0);
  std::vector<double> values(tokens * channels, 0.0);
  RangeDecoder latent_dec(latent);
  for (std::size_t slice = 0; slice < kScctxStages; ++slice) {
    const EntropyParams ep = schedule.params_for(slice);
    const auto mask = scctx_slice_mask(slice, tokens, channels);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const FixedGaussian g = FixedGaussian::quantize(ep.mu[i], ep.sigma[i]);
      s.y_hat[i] = decode_gaussian_value(latent_dec, g);
      values[i] = static_cast<double>(s.y_hat[i]);
    }
    schedule.commit(slice, values);
  }
  latent_dec.finish();
  return s;
}

CompressResult compress(const MrtModel& model, const Tensor& image, std::uint8_t lambda_index) {
  const ModelConfig& cfg = model.config;
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("compress: expected a [3 x H x W] image");
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const std::size_t ph = round_up(h, cfg.window_pixels());
  const std::size_t pw = round_up(w, cfg.window_pixels());
  const Tensor padded = (ph == h && pw == w) ? image : reflect_pad(image, ph, pw);

  const Tensor latents = encode_to_latents(padded, model.encoder, cfg);
  const Tensor y = rcm_analysis(latents, model.rcm);
  const Tensor y_hat = quantize_round(y);
  const LfqCode z_hat = lfq_quantize(hyper_analysis(y, model.rcm));

  CompressResult r;
  r.symbols.tokens = y_hat.rows();
  r.symbols.channels = y_hat.cols();
  r.symbols.y_hat.resize(y_hat.size());
  for (std::size_t i = 0; i < y_hat.size(); ++i) r.symbols.y_hat[i] = static_cast<std::int64_t>(y_hat[i]);
  r.symbols.z_hat = z_hat;

  const CodedPayloads coded = encode_latent_symbols(model.rcm, r.symbols);
  r.estimated_hyper_bits = coded.hyper_bits;
  r.estimated_latent_bits = coded.latent_bits;

  r.header.orig_width = checked_u32(w, "width");
  r.header.orig_height = checked_u32(h, "height");
  r.header.padded_width = checked_u32(pw, "padded width");
  r.header.padded_height = checked_u32(ph, "padded height");
  r.header.lambda_index = lambda_index;
  r.header.hyper_channels = static_cast<std::uint8_t>(cfg.hyper_channels);
  r.bitstream = write_bitstream(r.header, coded.hyper, coded.latent);
  r.header = read_header(r.bitstream);
  return r;
}

DecompressResult decompress(const MrtModel& model, std::span<const std::uint8_t> bitstream) {
  const ModelConfig& cfg = model.config;
  const ParsedBitstream parsed = read_bitstream(bitstream);
  const BitstreamHeader& h = parsed.header;
  if (h.hyper_channels != cfg.hyper_channels) {
    throw DecodeError("decompress: stream has c_z=" + std::to_string(h.hyper_channels) + ", model has " +
                      std::to_string(cfg.hyper_channels));
  }
  if (h.padded_width % cfg.window_pixels() != 0 || h.padded_height % cfg.window_pixels() != 0 ||
      h.padded_width - h.orig_width >= cfg.window_pixels() || h.padded_height - h.orig_height >= cfg.window_pixels()) {
    throw DecodeError("decompress: padded dimensions are inconsistent with the model window size");
  }
  const WindowGrid grid = window_grid(cfg, h.padded_height, h.padded_width);
  const std::size_t tokens = grid.windows() * cfg.latents_per_window;

  DecompressResult r;
  r.header = h;
  r.symbols = decode_latent_symbols(model.rcm, parsed.hyper_payload, parsed.latent_payload, tokens,
                                    cfg.latent_channels, cfg.hyper_channels);
  const Tensor latents_hat = rcm_synthesis(to_tensor(r.symbols), model.rcm);
  Tensor image = decode_from_latents(latents_hat, model.decoder, h.padded_height, h.padded_width, cfg);
  for (double& v : image.mutable_data()) v = std::clamp(v, 0.0, 1.0);
  r.image = crop(image, h.orig_height, h.orig_width);
  return r;
}

}  // namespace mrt
