// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrt/tensor.hpp"

namespace mrt {

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary PPM (P6, maxval 255) to a [3 x H x W] tensor in [0, 1].
Tensor read_ppm(const std::string& path);
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
/// Values are clamped to [0, 1] and rounded to 8 bits.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
void write_ppm(const std::string& path, const Tensor& image);

/// Mirror padding without edge repetition (..., 2, 1, 0, 1, 2, ...). Pads
/// wider than the image fold back repeatedly.
Tensor reflect_pad(const Tensor& image, std::size_t height, std::size_t width);
Tensor crop(const Tensor& image, std::size_t height, std::size_t width);
/// Smallest multiple of `unit` that is >= n (and >= unit).
std::size_t round_up(std::size_t n, std::size_t unit);

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes to a sibling temporary file and renames it into place, so a
/// failure never leaves a partial file at `path`.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace mrt
