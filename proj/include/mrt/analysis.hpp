// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mrt/model.hpp"

namespace mrt {

struct ErfMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t target_window = 0;
  std::vector<double> raw;      // [H x W] channel-summed |gradient|
  std::vector<double> clipped;  // raw with the top-K values clipped to the K-th
  std::size_t clip_count = 0;   // K
  double threshold = 0.0;       // K-th largest raw value
  /// Share of raw gradient mass on pixels outside the target window.
  double outside_fraction = 0.0;
};

/// Gradient of the squared norm of the target window's latent tokens with
/// respect to the input pixels. `clip_fraction` sets K as a share of pixels.
ErfMap compute_erf(const MrtModel& model, const Tensor& image, std::size_t target_window,
                   double clip_fraction = 0.001);

struct RedundancyReport {
  double mfc = 0.0;          // mean |Pearson| over channel pairs
  double mean_cosine = 0.0;  // over token pairs with nonzero norms
  double mean_l2 = 0.0;      // over all token pairs
  std::size_t token_pairs = 0;
  std::size_t skipped_token_pairs = 0;    // a zero-norm token makes cosine undefined
  std::size_t channel_pairs = 0;
  std::size_t skipped_channel_pairs = 0;  // a constant channel makes Pearson undefined
};

/// Features are [n tokens x c channels], n >= 2.
RedundancyReport redundancy_metrics(const Tensor& features);

struct CodebookReport {
  double lfq_entropy = 0.0;
  double vq_entropy = 0.0;
  std::size_t tokens = 0;
  std::size_t codebook_size = 0;
};

/// Index entropy of the LFQ hyper codes over a corpus, next to a
/// vector-quantized baseline whose codebook is a seeded sample of the
/// hyper vectors themselves.
CodebookReport codebook_report(const MrtModel& model, const std::vector<Tensor>& images, std::uint64_t seed);

struct RdRow {
  double lambda = 0.0;
  std::string image;  // file stem or "mean"
  double bpp = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
};

/// Encodes and decodes every image with every checkpoint; bpp counts real
/// bitstream bytes. One row per (checkpoint, image) plus a mean row per
/// checkpoint.
std::vector<RdRow> rd_harness(const std::vector<std::string>& checkpoints, const std::vector<std::string>& names,
                              const std::vector<Tensor>& images, std::uint64_t seed);
void write_rd_csv(std::ostream& os, const std::vector<RdRow>& rows);
std::vector<RdRow> read_rd_csv(const std::string& text);

/// Formats with 6 significant digits.
std::string format_g6(double v);

}  // namespace mrt
