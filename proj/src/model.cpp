// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/model.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "mrt/image_io.hpp"

namespace mrt {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::string text() {
    auto s = take(u32());
    return {s.begin(), s.end()};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string metadata_text(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv.values()) s += k + " = " + v + "\n";
  return s;
}

}  // namespace

MrtModel MrtModel::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  MrtModel m;
  m.config = cfg;
  m.encoder = MrtEncoderParams::init(cfg, rng);
  m.decoder = MrtDecoderParams::init(cfg, rng);
  m.rcm = RcmParams::init(cfg, rng);
  m.aux_head = Linear::init(cfg.channels, m.aux_blocks_per_token() * cfg.target_codebook, rng);
  return m;
}

std::size_t MrtModel::aux_blocks_per_token() const {
  const std::size_t s = config.patch_size / config.target_block;
  return s * s;
}

ParamList MrtModel::encoder_params() const {
  ParamList p;
  encoder.collect("encoder", p);
  return p;
}

ParamList MrtModel::decoder_params() const {
  ParamList p;
  decoder.collect("decoder", p);
  return p;
}

ParamList MrtModel::rcm_params() const {
  ParamList p;
  rcm.collect("rcm", p);
  return p;
}

ParamList MrtModel::aux_params() const {
  ParamList p;
  aux_head.collect("aux_head", p);
  return p;
}

ParamList MrtModel::all_params() const {
  ParamList p = encoder_params();
  p.append(decoder_params());
  p.append(rcm_params());
  p.append(aux_params());
  return p;
}

int MrtModel::lambda_index() const {
  const std::int64_t k = metadata.get_int("lambda_index", -1);
  return static_cast<int>(k);
}

std::vector<std::uint8_t> serialize_checkpoint(const MrtModel& model) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.text(model.config.to_text());
  w.text(metadata_text(model.metadata));
  const ParamList params = model.all_params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.u64(std::bit_cast<std::uint64_t>(v));
  }
  return std::move(w.out);
}

MrtModel deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  MrtModel model = MrtModel::init(ModelConfig::from_text(r.text()));
  model.metadata = KeyValues::parse(r.text());
  std::map<std::string, Tensor> slots;
  const ParamList params = model.all_params();
  for (const auto& [name, t] : params.entries()) slots.emplace(name, t);
  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw IoError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text();
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError("checkpoint: unexpected tensor '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    Tensor& dst = it->second;
    if (shape != dst.shape()) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                    to_string(dst.shape()));
    }
    for (double& v : dst.mutable_data()) v = std::bit_cast<double>(r.u64());
    detail::check_finite(dst, "checkpoint");
    slots.erase(it);
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::string& path, const MrtModel& model) {
  write_file_atomic(path, serialize_checkpoint(model));
}

MrtModel load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace mrt
