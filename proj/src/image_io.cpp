// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace mrt {

namespace {

class PpmCursor {
 public:
  explicit PpmCursor(std::span<const std::uint8_t> b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw IoError("ppm: header number too large");
    }
    if (digits == 0) throw IoError("ppm: malformed header");
    return v;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw IoError("ppm: not a binary P6 file");
  PpmCursor cur(bytes);
  cur.pos_ = 2;
  const std::size_t w = cur.number();
  const std::size_t h = cur.number();
  const std::size_t maxval = cur.number();
  if (w == 0 || h == 0) throw IoError("ppm: empty image");
  if (maxval != 255) throw IoError("ppm: only 8-bit (maxval 255) images are supported");
  if (cur.pos_ >= bytes.size() || !std::isspace(bytes[cur.pos_])) throw IoError("ppm: malformed header");
  ++cur.pos_;
  const std::size_t n = w * h;
  if (bytes.size() - cur.pos_ < 3 * n) throw IoError("ppm: truncated pixel data");
  Tensor img(Shape{3, h, w});
  auto d = img.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) d[c * n + i] = bytes[cur.pos_ + 3 * i + c] / 255.0;
  }
  return img;
}

Tensor read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("ppm: expected a [3 x H x W] image");
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t n = w * h;
  out.reserve(out.size() + 3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * n + i], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) { write_file_atomic(path, encode_ppm(image)); }

Tensor reflect_pad(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("reflect_pad: expected [C x H x W]");
  const std::size_t ch = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (height < h || width < w) throw ShapeError("reflect_pad: target smaller than the image");
  Tensor out(Shape{ch, height, width});
  auto d = out.mutable_data();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y), h);
      for (std::size_t x = 0; x < width; ++x) {
        d[(c * height + y) * width + x] = image[(c * h + sy) * w + reflect(static_cast<std::ptrdiff_t>(x), w)];
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || image.dim(1) < height || image.dim(2) < width) {
    throw ShapeError("crop: target larger than the image");
  }
  const std::size_t ch = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  Tensor out(Shape{ch, height, width});
  auto d = out.mutable_data();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) d[(c * height + y) * width + x] = image[(c * h + y) * w + x];
    }
  }
  return out;
}

std::size_t round_up(std::size_t n, std::size_t unit) {
  if (unit == 0) throw Error("round_up: zero unit");
  return std::max<std::size_t>(1, (n + unit - 1) / unit) * unit;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw IoError("error writing '" + path + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move output into place at '" + path + "': " + ec.message());
  }
}

}  // namespace mrt
