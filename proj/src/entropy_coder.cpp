// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/entropy_coder.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mrt {

namespace {

constexpr std::uint64_t kWindow = std::uint64_t{1} << 56;
constexpr std::uint64_t kBottom = std::uint64_t{1} << 48;
constexpr double kFixedOne = 65536.0;
constexpr double kInvSqrt2 = 0.70710678118654752440;

// Lower-tail normal CDF; accurate for large negative arguments.
double phi(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint32_t payload_crc(std::span<const std::uint8_t> hyper, std::span<const std::uint8_t> latent) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, hyper.data(), static_cast<uInt>(hyper.size()));
  crc = crc32(crc, latent.data(), static_cast<uInt>(latent.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

double QuantizedCdf::bits(std::size_t s) const {
  return -std::log2(static_cast<double>(freq(s)) / static_cast<double>(kCdfTotal));
}

void QuantizedCdf::validate() const {
  if (cdf.size() < 2 || cdf.front() != 0 || cdf.back() != kCdfTotal) throw Error("cdf: bad endpoints");
  for (std::size_t i = 0; i + 1 < cdf.size(); ++i) {
    if (cdf[i + 1] <= cdf[i]) throw Error("cdf: not strictly increasing at " + std::to_string(i));
  }
}

QuantizedCdf quantize_probabilities(std::span<const double> probs) {
  const std::size_t n = probs.size();
  if (n < 2 || n > kCdfTotal) throw Error("quantize_probabilities: unsupported alphabet size");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error("quantize_probabilities: invalid probability");
    total += p;
  }
  if (!(total > 0.0)) throw Error("quantize_probabilities: zero total mass");
  const double spare = static_cast<double>(kCdfTotal - n);
  std::vector<std::uint32_t> freq(n);
  std::uint64_t used = 0;
  const double peak = *std::max_element(probs.begin(), probs.end());
  std::vector<std::size_t> best;
  for (std::size_t i = 0; i < n; ++i) {
    freq[i] = 1 + static_cast<std::uint32_t>(std::floor(probs[i] / total * spare));
    used += freq[i];
    if (probs[i] == peak) best.push_back(i);
  }
  if (used > kCdfTotal) throw Error("quantize_probabilities: rounding overflow");
  // Split the remainder evenly over tied maxima so symmetric inputs stay
  // symmetric to within one count.
  const auto rest = static_cast<std::uint32_t>(kCdfTotal - used);
  const auto share = static_cast<std::uint32_t>(rest / best.size());
  const std::size_t extra = rest % best.size();
  for (std::size_t j = 0; j < best.size(); ++j) freq[best[j]] += share + (j < extra ? 1 : 0);
  QuantizedCdf q;
  q.cdf.resize(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) q.cdf[i + 1] = q.cdf[i] + freq[i];
  return q;
}

FixedGaussian FixedGaussian::quantize(double mu, double sigma) {
  if (!std::isfinite(mu) || !std::isfinite(sigma)) throw Error("gaussian parameters must be finite");
  const double min_sigma = std::round(0.01 * kFixedOne);
  FixedGaussian g;
  g.mu = static_cast<std::int64_t>(std::llround(std::clamp(mu, -1e9, 1e9) * kFixedOne));
  g.sigma = static_cast<std::int64_t>(std::max(min_sigma, std::round(std::min(sigma, 1e9) * kFixedOne)));
  return g;
}

std::int64_t FixedGaussian::center() const {
  constexpr std::int64_t one = 65536;
  constexpr std::int64_t half = one / 2;
  return mu >= 0 ? (mu + half) / one : -((-mu + half) / one);
}

QuantizedCdf gaussian_to_cdf(const FixedGaussian& g) {
  const double frac = static_cast<double>(g.mu - g.center() * 65536) / kFixedOne;
  const double sigma = static_cast<double>(g.sigma) / kFixedOne;
  std::vector<double> p(kGaussianSymbols);
  const double edge = static_cast<double>(kResidualLimit) + 0.5;
  p.front() = phi((-edge - frac) / sigma);
  p.back() = phi((frac - edge) / sigma);
  for (std::int64_t r = -kResidualLimit; r <= kResidualLimit; ++r) {
    const double dist = std::abs(static_cast<double>(r) - frac);
    p[static_cast<std::size_t>(r + kResidualLimit + 1)] = phi((0.5 - dist) / sigma) - phi((-0.5 - dist) / sigma);
  }
  return quantize_probabilities(p);
}

QuantizedCdf bernoulli_cdf(double logit) {
  const double l = std::round(std::clamp(logit, -64.0, 64.0) * kFixedOne) / kFixedOne;
  const double p1 = 1.0 / (1.0 + std::exp(-l));
  const auto f1 = static_cast<std::uint32_t>(
      std::clamp<double>(std::round(p1 * static_cast<double>(kCdfTotal)), 1.0, static_cast<double>(kCdfTotal - 1)));
  return QuantizedCdf{{0, kCdfTotal - f1, kCdfTotal}};
}

void RangeEncoder::put(std::uint8_t b) {
  // The first byte out of the cache is always zero: the initial interval
  // lies inside the window, so no carry can reach it.
  if (skip_first_) {
    skip_first_ = false;
    return;
  }
  out_.push_back(b);
}

void RangeEncoder::shift_low() {
  if (low_ < (std::uint64_t{0xFF} << 48) || low_ >= kWindow) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 56);
    std::uint8_t b = cache_;
    for (; pending_ > 0; --pending_) {
      put(static_cast<std::uint8_t>(b + carry));
      b = 0xFF;
    }
    cache_ = static_cast<std::uint8_t>(low_ >> 48);
  }
  ++pending_;
  ++shifts_;
  low_ = (low_ & (kBottom - 1)) << 8;
}

void RangeEncoder::encode(std::uint32_t low, std::uint32_t freq) {
  if (freq == 0 || low + static_cast<std::uint64_t>(freq) > kCdfTotal) throw Error("range coder: bad interval");
  const std::uint64_t r = range_ >> kCdfBits;
  low_ += r * low;
  range_ = r * freq;
  while (range_ < kBottom) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_symbol(const QuantizedCdf& cdf, std::size_t symbol) {
  if (symbol >= cdf.symbols()) throw Error("range coder: symbol outside the table");
  encode(cdf.low(symbol), cdf.freq(symbol));
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  // Each shift so far stands for one byte set by the coded symbols.
  const std::size_t content = shifts_;
  // Pick the value in [low, low + range) with the most trailing zero bits.
  for (int keep = 0; keep <= 7; ++keep) {
    const std::uint64_t mask = (kWindow >> (8 * keep)) - 1;
    const std::uint64_t x = (low_ + mask) & ~mask;
    if (x - low_ < range_) {
      low_ = x;
      break;
    }
  }
  for (int i = 0; i < 8; ++i) shift_low();
  while (out_.size() > content && out_.back() == 0) out_.pop_back();
  std::vector<std::uint8_t> out = std::move(out_);
  *this = RangeEncoder{};
  return out;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 7; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  const std::uint8_t b = pos_ < bytes_.size() ? bytes_[pos_] : 0;
  ++pos_;
  return b;
}

std::uint32_t RangeDecoder::target() {
  if (code_ >= range_) throw DecodeError("range decoder: code outside interval (corrupt stream)");
  const std::uint64_t v = code_ / (range_ >> kCdfBits);
  if (v >= kCdfTotal) throw DecodeError("range decoder: corrupt stream");
  return static_cast<std::uint32_t>(v);
}

void RangeDecoder::consume(std::uint32_t low, std::uint32_t freq) {
  const std::uint64_t r = range_ >> kCdfBits;
  code_ -= r * low;
  range_ = r * freq;
  while (range_ < kBottom) {
    code_ = ((code_ << 8) | next_byte()) & (kWindow - 1);
    range_ <<= 8;
  }
}

std::size_t RangeDecoder::decode_symbol(const QuantizedCdf& cdf) {
  const std::uint32_t v = target();
  const auto it = std::upper_bound(cdf.cdf.begin(), cdf.cdf.end(), v);
  const auto s = static_cast<std::size_t>(it - cdf.cdf.begin()) - 1;
  if (s >= cdf.symbols()) throw DecodeError("range decoder: target beyond table");
  consume(cdf.low(s), cdf.freq(s));
  return s;
}

std::uint16_t RangeDecoder::decode_raw16() {
  const std::uint32_t v = target();
  consume(v, 1);
  return static_cast<std::uint16_t>(v);
}

void RangeDecoder::finish() const {
  if (bytes_.size() > pos_) throw DecodeError("range decoder: trailing bytes after the coded symbols");
}

std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols,
                                         std::span<const QuantizedCdf> cdfs) {
  if (symbols.size() != cdfs.size()) throw Error("encode_symbols: one table per symbol required");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode_symbol(cdfs[i], symbols[i]);
  return enc.finish();
}

std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes, std::span<const QuantizedCdf> cdfs) {
  RangeDecoder dec(bytes);
  std::vector<std::size_t> out;
  out.reserve(cdfs.size());
  for (const auto& cdf : cdfs) out.push_back(dec.decode_symbol(cdf));
  dec.finish();
  return out;
}

namespace {

struct ResidualSymbol {
  std::size_t symbol;
  bool escape;
  std::uint16_t extra;
};

ResidualSymbol residual_symbol(std::int64_t value, const FixedGaussian& g) {
  const std::int64_t r = value - g.center();
  if (r < -kResidualLimit || r > kResidualLimit) {
    const std::int64_t excess = std::abs(r) - kResidualLimit - 1;
    if (excess > 0xFFFF) throw Error("gaussian coder: value " + std::to_string(value) + " beyond escape range");
    return {r < 0 ? std::size_t{0} : kGaussianSymbols - 1, true, static_cast<std::uint16_t>(excess)};
  }
  return {static_cast<std::size_t>(r + kResidualLimit + 1), false, 0};
}

}  // namespace

double gaussian_value_bits(std::int64_t value, const FixedGaussian& g) {
  const ResidualSymbol s = residual_symbol(value, g);
  return gaussian_to_cdf(g).bits(s.symbol) + (s.escape ? 16.0 : 0.0);
}

double encode_gaussian_value(RangeEncoder& enc, std::int64_t value, const FixedGaussian& g) {
  const QuantizedCdf cdf = gaussian_to_cdf(g);
  const ResidualSymbol s = residual_symbol(value, g);
  enc.encode_symbol(cdf, s.symbol);
  if (s.escape) enc.encode_raw16(s.extra);
  return cdf.bits(s.symbol) + (s.escape ? 16.0 : 0.0);
}

std::int64_t decode_gaussian_value(RangeDecoder& dec, const FixedGaussian& g) {
  const QuantizedCdf cdf = gaussian_to_cdf(g);
  const std::size_t s = dec.decode_symbol(cdf);
  if (s == 0) return g.center() - kResidualLimit - 1 - dec.decode_raw16();
  if (s == kGaussianSymbols - 1) return g.center() + kResidualLimit + 1 + dec.decode_raw16();
  return g.center() + static_cast<std::int64_t>(s) - kResidualLimit - 1;
}

std::vector<std::uint8_t> write_bitstream(const BitstreamHeader& header, std::span<const std::uint8_t> hyper,
                                          std::span<const std::uint8_t> latent) {
  std::vector<std::uint8_t> out;
  out.reserve(kBitstreamHeaderBytes + hyper.size() + latent.size());
  for (char c : {'M', 'R', 'T', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kBitstreamVersion);
  put_u32(out, header.orig_width);
  put_u32(out, header.orig_height);
  put_u32(out, header.padded_width);
  put_u32(out, header.padded_height);
  out.push_back(header.lambda_index);
  out.push_back(header.hyper_channels);
  put_u32(out, static_cast<std::uint32_t>(hyper.size()));
  put_u32(out, static_cast<std::uint32_t>(latent.size()));
  put_u32(out, payload_crc(hyper, latent));
  out.insert(out.end(), hyper.begin(), hyper.end());
  out.insert(out.end(), latent.begin(), latent.end());
  return out;
}

BitstreamHeader read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kBitstreamHeaderBytes) throw DecodeError("bitstream: truncated header");
  if (std::memcmp(bytes.data(), "MRT1", 4) != 0) throw DecodeError("bitstream: bad magic");
  if (bytes[4] != kBitstreamVersion) {
    throw DecodeError("bitstream: unsupported version " + std::to_string(bytes[4]));
  }
  BitstreamHeader h;
  h.orig_width = get_u32(bytes, 5);
  h.orig_height = get_u32(bytes, 9);
  h.padded_width = get_u32(bytes, 13);
  h.padded_height = get_u32(bytes, 17);
  h.lambda_index = bytes[21];
  h.hyper_channels = bytes[22];
  h.hyper_bytes = get_u32(bytes, 23);
  h.latent_bytes = get_u32(bytes, 27);
  h.payload_crc = get_u32(bytes, 31);
  if (h.orig_width == 0 || h.orig_height == 0 || h.padded_width < h.orig_width || h.padded_height < h.orig_height) {
    throw DecodeError("bitstream: inconsistent image dimensions");
  }
  return h;
}

ParsedBitstream read_bitstream(std::span<const std::uint8_t> bytes) {
  ParsedBitstream p;
  p.header = read_header(bytes);
  const std::uint64_t need =
      kBitstreamHeaderBytes + static_cast<std::uint64_t>(p.header.hyper_bytes) + p.header.latent_bytes;
  if (bytes.size() < need) throw DecodeError("bitstream: truncated payload");
  if (bytes.size() > need) throw DecodeError("bitstream: trailing bytes after payload");
  const auto hyper = bytes.subspan(kBitstreamHeaderBytes, p.header.hyper_bytes);
  const auto latent = bytes.subspan(kBitstreamHeaderBytes + p.header.hyper_bytes, p.header.latent_bytes);
  if (payload_crc(hyper, latent) != p.header.payload_crc) throw DecodeError("bitstream: payload checksum mismatch");
  p.hyper_payload.assign(hyper.begin(), hyper.end());
  p.latent_payload.assign(latent.begin(), latent.end());
  return p;
}

}  // namespace mrt
