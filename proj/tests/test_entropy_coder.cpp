// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mrt/entropy_coder.hpp"
#include "mrt/nn.hpp"

using namespace mrt;

namespace {

QuantizedCdf random_cdf(Rng& rng, std::size_t max_symbols = 40) {
  std::uniform_int_distribution<std::size_t> nd(2, max_symbols);
  std::exponential_distribution<double> pd(1.0);
  std::vector<double> p(nd(rng));
  for (double& v : p) v = std::pow(pd(rng), 4.0);
  return quantize_probabilities(p);
}

double ideal_bits(std::span<const std::size_t> symbols, std::span<const QuantizedCdf> cdfs) {
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) bits += cdfs[i].bits(symbols[i]);
  return bits;
}

BitstreamHeader sample_header() {
  BitstreamHeader h;
  h.orig_width = 300;
  h.orig_height = 200;
  h.padded_width = 512;
  h.padded_height = 256;
  h.lambda_index = 2;
  h.hyper_channels = 6;
  return h;
}

}  // namespace

TEST_CASE("100 uniform 4-ary symbols cost 200 bits plus at most 32") {
  const std::vector<double> p(4, 0.25);
  const QuantizedCdf cdf = quantize_probabilities(p);
  CHECK(cdf.cdf == std::vector<std::uint32_t>{0, 16384, 32768, 49152, 65536});
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> sd(0, 3);
  std::vector<std::size_t> symbols(100);
  for (auto& s : symbols) s = sd(rng);
  const std::vector<QuantizedCdf> cdfs(100, cdf);
  const auto bytes = encode_symbols(symbols, cdfs);
  CHECK(bytes.size() * 8 >= 200);
  CHECK(bytes.size() * 8 <= 232);
  CHECK(decode_symbols(bytes, cdfs) == symbols);
}

TEST_CASE("empty sequence encodes to nothing and decodes to empty") {
  const auto bytes = encode_symbols({}, {});
  CHECK(bytes.empty());
  CHECK(decode_symbols(bytes, {}).empty());
}

TEST_CASE("random symbols with random tables round-trip exactly") {
  Rng rng(2);
  std::vector<QuantizedCdf> tables;
  for (int i = 0; i < 64; ++i) tables.push_back(random_cdf(rng));
  std::uniform_int_distribution<std::size_t> td(0, tables.size() - 1);
  std::vector<std::size_t> symbols;
  std::vector<QuantizedCdf> cdfs;
  for (int i = 0; i < 100000; ++i) {
    const QuantizedCdf& t = tables[td(rng)];
    // Sample from the table itself so that code length tracks the model.
    std::uniform_int_distribution<std::uint32_t> vd(0, kCdfTotal - 1);
    const std::uint32_t v = vd(rng);
    std::size_t s = 0;
    while (t.cdf[s + 1] <= v) ++s;
    symbols.push_back(s);
    cdfs.push_back(t);
  }
  const auto bytes = encode_symbols(symbols, cdfs);
  CHECK(decode_symbols(bytes, cdfs) == symbols);
  CHECK(static_cast<double>(bytes.size() * 8) <= ideal_bits(symbols, cdfs) + 32.0);
}

TEST_CASE("low-probability symbols round-trip") {
  std::vector<double> p(300, 1e-12);
  p[7] = 1.0;
  const QuantizedCdf cdf = quantize_probabilities(p);
  cdf.validate();
  CHECK(cdf.freq(0) == 1);
  std::vector<std::size_t> symbols;
  for (std::size_t i = 0; i < 2000; ++i) symbols.push_back(i % 300);
  const std::vector<QuantizedCdf> cdfs(symbols.size(), cdf);
  const auto bytes = encode_symbols(symbols, cdfs);
  CHECK(decode_symbols(bytes, cdfs) == symbols);
  CHECK(static_cast<double>(bytes.size() * 8) <= ideal_bits(symbols, cdfs) + 32.0);
}

TEST_CASE("long runs near the top of the interval propagate carries") {
  // A dominant last symbol keeps low near the top of the window, which builds
  // runs of pending 0xFF bytes that a later carry must resolve.
  const QuantizedCdf skewed{{0, 1, 2, 65536}};
  Rng rng(9);
  std::uniform_int_distribution<int> rare(0, 199);
  std::vector<std::size_t> symbols;
  for (int i = 0; i < 50000; ++i) symbols.push_back(rare(rng) == 0 ? static_cast<std::size_t>(i % 2) : 2);
  const std::vector<QuantizedCdf> cdfs(symbols.size(), skewed);
  const auto bytes = encode_symbols(symbols, cdfs);
  CHECK(decode_symbols(bytes, cdfs) == symbols);
  CHECK(static_cast<double>(bytes.size() * 8) <= ideal_bits(symbols, cdfs) + 32.0);
  std::size_t ff = 0;
  for (auto b : bytes) ff += b == 0xFF;
  CHECK(ff > 0);
}

TEST_CASE("quantized tables are valid") {
  CHECK_THROWS_AS(quantize_probabilities(std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(quantize_probabilities(std::vector<double>{0.0, 0.0}), Error);
  CHECK_THROWS_AS(quantize_probabilities(std::vector<double>{-1.0, 2.0}), Error);
  const QuantizedCdf q = quantize_probabilities(std::vector<double>{0.0, 1.0, 0.0});
  CHECK(q.cdf == std::vector<std::uint32_t>{0, 1, 65535, 65536});
  QuantizedCdf bad{{0, 5, 5, 65536}};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("gaussian tables are strictly increasing for random parameters") {
  Rng rng(3);
  std::uniform_real_distribution<double> mu_d(-200.0, 200.0);
  std::uniform_real_distribution<double> ls_d(std::log(0.01), std::log(500.0));
  for (int i = 0; i < 10000; ++i) {
    const QuantizedCdf q = gaussian_to_cdf(mu_d(rng), std::exp(ls_d(rng)));
    REQUIRE(q.symbols() == kGaussianSymbols);
    REQUIRE_NOTHROW(q.validate());
  }
}

TEST_CASE("zero-mean gaussian tables are mirror symmetric") {
  for (double sigma : {0.01, 0.3, 1.0, 2.7, 10.0, 40.0, 1000.0}) {
    const QuantizedCdf q = gaussian_to_cdf(0.0, sigma);
    for (std::size_t s = 0; s <= kGaussianSymbols; ++s) {
      const std::int64_t sum = static_cast<std::int64_t>(q.cdf[s]) + q.cdf[kGaussianSymbols - s];
      CHECK(std::llabs(sum - static_cast<std::int64_t>(kCdfTotal)) <= 1);
    }
  }
}

TEST_CASE("wide gaussian gives a near-uniform table") {
  // The in-range symbols are equally likely; the escape tails carry the rest.
  for (double sigma : {1e3, 1e6}) {
    const QuantizedCdf q = gaussian_to_cdf(0.0, sigma);
    std::uint32_t lo = kCdfTotal;
    std::uint32_t hi = 0;
    for (std::size_t s = 1; s + 1 < kGaussianSymbols; ++s) {
      lo = std::min(lo, q.freq(s));
      hi = std::max(hi, q.freq(s));
    }
    CHECK(hi - lo <= 1);
  }
  const QuantizedCdf q = gaussian_to_cdf(0.0, 30.0);
  CHECK(q.freq(65) >= q.freq(66));
  CHECK(q.freq(66) > q.freq(100));
}

TEST_CASE("fixed-point gaussian parameters") {
  const FixedGaussian g = FixedGaussian::quantize(1.5, 0.001);
  CHECK(g.mu == 98304);
  CHECK(g.sigma == 655);
  CHECK(g.center() == 2);
  CHECK(FixedGaussian::quantize(-1.5, 1.0).center() == -2);
  CHECK(FixedGaussian::quantize(-1.49, 1.0).center() == -1);
  CHECK(FixedGaussian::quantize(0.0, 1.0).center() == 0);
  CHECK_THROWS_AS(FixedGaussian::quantize(NAN, 1.0), Error);
}

TEST_CASE("gaussian values including escapes round-trip") {
  Rng rng(4);
  std::uniform_real_distribution<double> mu_d(-20.0, 20.0);
  std::uniform_real_distribution<double> s_d(0.01, 30.0);
  std::uniform_int_distribution<std::int64_t> v_d(-400, 400);
  std::vector<FixedGaussian> gs;
  std::vector<std::int64_t> values;
  RangeEncoder enc;
  double model_bits = 0.0;
  for (int i = 0; i < 5000; ++i) {
    gs.push_back(FixedGaussian::quantize(mu_d(rng), s_d(rng)));
    values.push_back(i % 10 == 0 ? v_d(rng) : gs.back().center() + (i % 7) - 3);
    const double b = encode_gaussian_value(enc, values.back(), gs.back());
    CHECK(b == doctest::Approx(gaussian_value_bits(values.back(), gs.back())));
    model_bits += b;
  }
  values.push_back(65 + 65535);
  gs.push_back(FixedGaussian::quantize(0.0, 1.0));
  model_bits += encode_gaussian_value(enc, values.back(), gs.back());
  const auto bytes = enc.finish();
  CHECK(static_cast<double>(bytes.size() * 8) <= model_bits + 32.0);
  RangeDecoder dec(bytes);
  for (std::size_t i = 0; i < values.size(); ++i) REQUIRE(decode_gaussian_value(dec, gs[i]) == values[i]);
  dec.finish();
  RangeEncoder too_far;
  CHECK_THROWS_AS(encode_gaussian_value(too_far, 66 + 65535, FixedGaussian::quantize(0.0, 1.0)), Error);
}

TEST_CASE("bernoulli tables") {
  CHECK(bernoulli_cdf(0.0).cdf == std::vector<std::uint32_t>{0, 32768, 65536});
  CHECK(bernoulli_cdf(1000.0).cdf == std::vector<std::uint32_t>{0, 1, 65536});
  CHECK(bernoulli_cdf(-1000.0).cdf == std::vector<std::uint32_t>{0, 65535, 65536});
}

TEST_CASE("corrupted payloads raise decode errors rather than returning garbage silently") {
  Rng rng(5);
  std::vector<QuantizedCdf> cdfs;
  std::vector<std::size_t> symbols;
  for (int i = 0; i < 500; ++i) {
    cdfs.push_back(random_cdf(rng, 8));
    symbols.push_back(static_cast<std::size_t>(i) % cdfs.back().symbols());
  }
  const auto bytes = encode_symbols(symbols, cdfs);
  // Extra trailing bytes are always detected.
  auto longer = bytes;
  longer.push_back(0x5a);
  longer.insert(longer.end(), 8, 0x11);
  CHECK_THROWS_AS(decode_symbols(longer, cdfs), DecodeError);
}

TEST_CASE("bitstream container round trip") {
  Rng rng(6);
  std::uniform_int_distribution<int> bd(0, 255);
  std::vector<std::uint8_t> hyper(37);
  std::vector<std::uint8_t> latent(1001);
  for (auto& b : hyper) b = static_cast<std::uint8_t>(bd(rng));
  for (auto& b : latent) b = static_cast<std::uint8_t>(bd(rng));
  const BitstreamHeader h = sample_header();
  const auto stream = write_bitstream(h, hyper, latent);
  CHECK(stream.size() == kBitstreamHeaderBytes + hyper.size() + latent.size());
  CHECK(stream[0] == 'M');
  CHECK(stream[3] == '1');
  CHECK(stream[4] == kBitstreamVersion);
  CHECK(stream[5] == 44);  // 300 little-endian
  CHECK(stream[6] == 1);
  const ParsedBitstream p = read_bitstream(stream);
  CHECK(p.header.orig_width == 300);
  CHECK(p.header.orig_height == 200);
  CHECK(p.header.padded_width == 512);
  CHECK(p.header.padded_height == 256);
  CHECK(p.header.lambda_index == 2);
  CHECK(p.header.hyper_channels == 6);
  CHECK(p.header.hyper_bytes == 37);
  CHECK(p.header.latent_bytes == 1001);
  CHECK(p.hyper_payload == hyper);
  CHECK(p.latent_payload == latent);
  // The header alone parses without the payload.
  const std::span<const std::uint8_t> head(stream.data(), kBitstreamHeaderBytes);
  CHECK(read_header(head).latent_bytes == 1001);
}

TEST_CASE("bitstream errors") {
  const std::vector<std::uint8_t> hyper = {1, 2, 3};
  const std::vector<std::uint8_t> latent = {4, 5, 6, 7};
  const auto stream = write_bitstream(sample_header(), hyper, latent);
  SUBCASE("bad magic") {
    auto s = stream;
    s[0] = 'X';
    CHECK_THROWS_WITH_AS(read_bitstream(s), "bitstream: bad magic", DecodeError);
  }
  SUBCASE("version mismatch") {
    auto s = stream;
    s[4] = 9;
    CHECK_THROWS_WITH_AS(read_bitstream(s), "bitstream: unsupported version 9", DecodeError);
  }
  SUBCASE("every truncation") {
    for (std::size_t n = 0; n < stream.size(); ++n) {
      const std::span<const std::uint8_t> cut(stream.data(), n);
      CHECK_THROWS_AS(read_bitstream(cut), DecodeError);
    }
  }
  SUBCASE("trailing bytes") {
    auto s = stream;
    s.push_back(0);
    CHECK_THROWS_AS(read_bitstream(s), DecodeError);
  }
  SUBCASE("payload bit flips") {
    for (std::size_t i = kBitstreamHeaderBytes; i < stream.size(); ++i) {
      auto s = stream;
      s[i] ^= 0x10;
      CHECK_THROWS_WITH_AS(read_bitstream(s), "bitstream: payload checksum mismatch", DecodeError);
    }
  }
  SUBCASE("inconsistent dimensions") {
    BitstreamHeader h = sample_header();
    h.padded_width = 100;
    CHECK_THROWS_AS(read_bitstream(write_bitstream(h, hyper, latent)), DecodeError);
  }
}
