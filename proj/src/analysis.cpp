// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mrt/codec.hpp"
#include "mrt/image_io.hpp"
#include "mrt/training.hpp"

namespace mrt {

ErfMap compute_erf(const MrtModel& model, const Tensor& image, std::size_t target_window, double clip_fraction) {
  const ModelConfig& cfg = model.config;
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("compute_erf: expected a [3 x H x W] image");
  const WindowGrid grid = window_grid(cfg, image.dim(1), image.dim(2));
  if (target_window >= grid.windows()) {
    throw Error("compute_erf: window " + std::to_string(target_window) + " out of range (image has " +
                std::to_string(grid.windows()) + ")");
  }
  if (!(clip_fraction >= 0.0 && clip_fraction <= 1.0)) throw Error("compute_erf: clip fraction must lie in [0, 1]");

  Tensor x = image.clone();
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor latents = encode_to_latents(x, model.encoder, cfg);
    const Tensor window =
        slice_rows(latents, target_window * cfg.latents_per_window, cfg.latents_per_window);
    tape.backward(sum(square(window)));
  }
  const std::vector<double> g = x.grad();

  ErfMap m;
  m.height = grid.height;
  m.width = grid.width;
  m.target_window = target_window;
  const std::size_t n = m.height * m.width;
  m.raw.assign(n, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) m.raw[i] += std::abs(g[c * n + i]);
  }
  double total = 0.0;
  double outside = 0.0;
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t xx = 0; xx < m.width; ++xx) {
      const double v = m.raw[y * m.width + xx];
      total += v;
      if (grid.window_of_pixel(y, xx, cfg) != target_window) outside += v;
    }
  }
  m.outside_fraction = total > 0.0 ? outside / total : 0.0;

  m.clip_count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(clip_fraction * static_cast<double>(n))));
  m.clip_count = std::min(m.clip_count, n);
  std::vector<double> sorted = m.raw;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(m.clip_count - 1), sorted.end(),
                   std::greater<>());
  m.threshold = sorted[m.clip_count - 1];
  m.clipped = m.raw;
  for (double& v : m.clipped) v = std::min(v, m.threshold);
  return m;
}

RedundancyReport redundancy_metrics(const Tensor& features) {
  if (features.rank() != 2 || features.rows() < 2) throw ShapeError("redundancy_metrics: need an [n x c] matrix with n >= 2");
  const std::size_t n = features.rows();
  const std::size_t c = features.cols();
  const auto f = features.data();
  RedundancyReport r;

  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < c; ++d) s += f[i * c + d] * f[i * c + d];
    norms[i] = std::sqrt(s);
  }
  double cos_sum = 0.0;
  double l2_sum = 0.0;
  std::size_t cos_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      double dist = 0.0;
      for (std::size_t d = 0; d < c; ++d) {
        dot += f[i * c + d] * f[j * c + d];
        const double e = f[i * c + d] - f[j * c + d];
        dist += e * e;
      }
      l2_sum += std::sqrt(dist);
      ++r.token_pairs;
      if (norms[i] == 0.0 || norms[j] == 0.0) {
        ++r.skipped_token_pairs;
        continue;
      }
      cos_sum += dot / (norms[i] * norms[j]);
      ++cos_count;
    }
  }
  r.mean_l2 = l2_sum / static_cast<double>(r.token_pairs);
  r.mean_cosine = cos_count > 0 ? cos_sum / static_cast<double>(cos_count) : 0.0;

  std::vector<double> centered(n * c);
  std::vector<double> spread(c, 0.0);
  for (std::size_t d = 0; d < c; ++d) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += f[i * c + d];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      centered[d * n + i] = f[i * c + d] - m;
      spread[d] += centered[d * n + i] * centered[d * n + i];
    }
  }
  double mfc_sum = 0.0;
  std::size_t mfc_count = 0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) {
      ++r.channel_pairs;
      if (spread[a] == 0.0 || spread[b] == 0.0) {
        ++r.skipped_channel_pairs;
        continue;
      }
      double cov = 0.0;
      for (std::size_t i = 0; i < n; ++i) cov += centered[a * n + i] * centered[b * n + i];
      mfc_sum += std::abs(cov / std::sqrt(spread[a] * spread[b]));
      ++mfc_count;
    }
  }
  r.mfc = mfc_count > 0 ? mfc_sum / static_cast<double>(mfc_count) : 0.0;
  return r;
}

CodebookReport codebook_report(const MrtModel& model, const std::vector<Tensor>& images, std::uint64_t seed) {
  if (images.empty()) throw Error("codebook_report: empty corpus");
  std::vector<Tensor> zs;
  std::vector<std::uint32_t> lfq;
  for (const auto& img : images) {
    const std::size_t unit = model.config.window_pixels();
    const Tensor x = reflect_pad(img, round_up(img.dim(1), unit), round_up(img.dim(2), unit));
    const Tensor y = rcm_analysis(encode_to_latents(x, model.encoder, model.config), model.rcm);
    const Tensor z = hyper_analysis(y, model.rcm);
    const auto idx = lfq_quantize(z).indices();
    lfq.insert(lfq.end(), idx.begin(), idx.end());
    zs.push_back(z);
  }
  const Tensor all = concat_rows(zs);
  CodebookReport r;
  r.tokens = all.rows();
  r.codebook_size = std::min<std::size_t>(std::size_t{1} << model.config.hyper_channels, r.tokens);
  std::vector<std::size_t> order(r.tokens);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(r.codebook_size);
  std::sort(order.begin(), order.end());
  const Tensor codebook = gather_rows(all, order);
  r.lfq_entropy = codebook_entropy(lfq);
  r.vq_entropy = codebook_entropy(vq_assign(all, codebook));
  return r;
}

std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<RdRow> rd_harness(const std::vector<std::string>& checkpoints, const std::vector<std::string>& names,
                              const std::vector<Tensor>& images, std::uint64_t seed) {
  if (checkpoints.empty()) throw Error("rd_harness: no checkpoints");
  if (images.empty() || names.size() != images.size()) throw Error("rd_harness: images and names differ");
  const FeatureExtractor fe(seed);
  std::vector<RdRow> rows;
  for (const auto& path : checkpoints) {
    const MrtModel model = load_checkpoint(path);
    const int li = model.lambda_index();
    const double lambda = li >= 0 ? kLambdaTable[static_cast<std::size_t>(li)] : 0.0;
    RdRow mean_row{lambda, "mean", 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor& x = images[i];
      const CompressResult enc = compress(model, x, static_cast<std::uint8_t>(std::max(li, 0)));
      const DecompressResult dec = decompress(model, enc.bitstream);
      RdRow row{lambda, names[i], enc.bpp(), 0.0, 0.0};
      double l1 = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) l1 += std::abs(dec.image[k] - x[k]);
      row.l1 = l1 / static_cast<double>(x.size());
      const std::size_t h8 = x.dim(1) / 8 * 8;
      const std::size_t w8 = x.dim(2) / 8 * 8;
      if (h8 > 0 && w8 > 0) row.perceptual = perceptual_loss(crop(dec.image, h8, w8), crop(x, h8, w8), fe).item();
      mean_row.bpp += row.bpp;
      mean_row.l1 += row.l1;
      mean_row.perceptual += row.perceptual;
      rows.push_back(row);
    }
    const double inv = 1.0 / static_cast<double>(images.size());
    mean_row.bpp *= inv;
    mean_row.l1 *= inv;
    mean_row.perceptual *= inv;
    rows.push_back(mean_row);
  }
  return rows;
}

void write_rd_csv(std::ostream& os, const std::vector<RdRow>& rows) {
  os << "lambda,image,bpp,l1,perceptual\n";
  for (const auto& r : rows) {
    os << format_g6(r.lambda) << ',' << r.image << ',' << format_g6(r.bpp) << ',' << format_g6(r.l1) << ','
       << format_g6(r.perceptual) << '\n';
  }
}

std::vector<RdRow> read_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "lambda,image,bpp,l1,perceptual") throw Error("rd csv: bad header");
  std::vector<RdRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw Error("rd csv: expected 5 fields in '" + line + "'");
    rows.push_back({std::stod(f[0]), f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
  }
  return rows;
}

}  // namespace mrt
