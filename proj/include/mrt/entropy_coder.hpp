// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mrt/tensor.hpp"

namespace mrt {

class DecodeError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCdfBits = 16;
inline constexpr std::uint32_t kCdfTotal = std::uint32_t{1} << kCdfBits;
inline constexpr std::int64_t kResidualLimit = 64;
/// Residual alphabet: low escape, -64..64, high escape.
inline constexpr std::size_t kGaussianSymbols = 2 * kResidualLimit + 3;

/// Integer CDF with total 2^16: cdf.front() == 0, cdf.back() == 2^16 and
/// every symbol has frequency >= 1.
struct QuantizedCdf {
  std::vector<std::uint32_t> cdf;

  std::size_t symbols() const { return cdf.size() - 1; }
  std::uint32_t low(std::size_t s) const { return cdf[s]; }
  std::uint32_t freq(std::size_t s) const { return cdf[s + 1] - cdf[s]; }
  double bits(std::size_t s) const;
  void validate() const;
};

/// Scales probabilities to integer frequencies summing to 2^16 with at least
/// one count each; the rounding remainder goes to the most probable symbol
/// (split evenly when several tie).
QuantizedCdf quantize_probabilities(std::span<const double> probs);

/// Mean and scale in Q16 fixed point. Encoder and decoder build tables only
/// from these values.
struct FixedGaussian {
  std::int64_t mu = 0;
  std::int64_t sigma = 0;

  static FixedGaussian quantize(double mu, double sigma);
  /// Integer nearest to mu (ties away from zero); residuals are coded
  /// relative to it.
  std::int64_t center() const;
};

/// Residual table for N(mu - center, sigma) over [-64, 64] plus two escape
/// tails.
QuantizedCdf gaussian_to_cdf(const FixedGaussian& g);
inline QuantizedCdf gaussian_to_cdf(double mu, double sigma) {
  return gaussian_to_cdf(FixedGaussian::quantize(mu, sigma));
}

/// Two-symbol table: symbol 1 (bit set) has probability sigmoid(logit).
QuantizedCdf bernoulli_cdf(double logit);

/// Range encoder with carry propagation: a 56-bit low window, byte-wise
/// renormalization that keeps range >= 2^48, and pending 0xFF bytes resolved
/// when a carry arrives.
class RangeEncoder {
 public:
  void encode(std::uint32_t low, std::uint32_t freq);
  void encode_symbol(const QuantizedCdf& cdf, std::size_t symbol);
  void encode_raw16(std::uint16_t value) { encode(value, 1); }
  /// Flushes the shortest byte suffix that pins the final interval. Trailing
  /// zero bytes of that suffix are dropped because the decoder pads with
  /// zeros; bytes fixed by the coded symbols are always kept.
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();
  void put(std::uint8_t b);

  std::uint64_t low_ = 0;
  std::uint64_t range_ = (std::uint64_t{1} << 56) - 1;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool skip_first_ = true;
  std::size_t shifts_ = 0;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  std::size_t decode_symbol(const QuantizedCdf& cdf);
  std::uint16_t decode_raw16();
  /// Throws when the payload holds bytes the encoder could not have written.
  void finish() const;

 private:
  std::uint32_t target();
  void consume(std::uint32_t low, std::uint32_t freq);
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint64_t range_ = (std::uint64_t{1} << 56) - 1;
  std::uint64_t code_ = 0;  // offset of the coded value from low, in the window
};

std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols,
                                         std::span<const QuantizedCdf> cdfs);
std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes, std::span<const QuantizedCdf> cdfs);

/// Codes an integer under a quantized Gaussian; values beyond +-64 of the
/// center use an escape symbol plus a raw 16-bit magnitude. Returns the
/// model cost in bits.
double encode_gaussian_value(RangeEncoder& enc, std::int64_t value, const FixedGaussian& g);
std::int64_t decode_gaussian_value(RangeDecoder& dec, const FixedGaussian& g);
double gaussian_value_bits(std::int64_t value, const FixedGaussian& g);

inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kBitstreamHeaderBytes = 35;

struct BitstreamHeader {
  std::uint32_t orig_width = 0;
  std::uint32_t orig_height = 0;
  std::uint32_t padded_width = 0;
  std::uint32_t padded_height = 0;
  std::uint8_t lambda_index = 0;
  std::uint8_t hyper_channels = 0;
  std::uint32_t hyper_bytes = 0;
  std::uint32_t latent_bytes = 0;
  std::uint32_t payload_crc = 0;
};

struct ParsedBitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> hyper_payload;
  std::vector<std::uint8_t> latent_payload;
};

/// Layout (little-endian): "MRT1", version u8, orig w/h u32, padded w/h u32,
/// lambda index u8, c_z u8, hyper/latent payload lengths u32, CRC-32 of both
/// payloads u32, hyper payload, latent payload.
std::vector<std::uint8_t> write_bitstream(const BitstreamHeader& header, std::span<const std::uint8_t> hyper,
                                          std::span<const std::uint8_t> latent);
/// Parses the fixed header only.
BitstreamHeader read_header(std::span<const std::uint8_t> bytes);
ParsedBitstream read_bitstream(std::span<const std::uint8_t> bytes);

}  // namespace mrt
