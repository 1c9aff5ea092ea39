// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. `--only 1,4` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "mrt/analysis.hpp"
#include "mrt/birwkv.hpp"
#include "mrt/codec.hpp"
#include "mrt/local_vit.hpp"
#include "mrt/model.hpp"
#include "mrt/ops.hpp"
#include "mrt/training.hpp"
#include "support/gradcheck.hpp"

using namespace mrt;
using mrt::testing::grad_check;
using mrt::testing::project;
using mrt::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  double runtime = 0.0;  // seconds charged to the criterion
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. BiWKV oracle

long double wkv_direct(const Tensor& k, const Tensor& v, const std::vector<double>& w, const Tensor& u, std::size_t t,
                       std::size_t ch) {
  const std::size_t T = k.rows();
  const std::size_t c = k.cols();
  std::vector<long double> e(T);
  long double top = -INFINITY;
  for (std::size_t i = 0; i < T; ++i) {
    const long double dist = static_cast<long double>(i > t ? i - t : t - i);
    e[i] = i == t ? static_cast<long double>(u[ch]) + k[t * c + ch]
                  : -(dist - 1.0L) * static_cast<long double>(w[ch]) / static_cast<long double>(T) + k[i * c + ch];
    top = std::max(top, e[i]);
  }
  long double num = 0.0L;
  long double den = 0.0L;
  for (std::size_t i = 0; i < T; ++i) {
    const long double a = std::exp(e[i] - top);
    num += a * v[i * c + ch];
    den += a;
  }
  return num / den;
}

Outcome wkv_oracle() {
  Rng rng(101);
  std::uniform_int_distribution<std::size_t> tlen(1, 128);
  std::uniform_int_distribution<std::size_t> width(1, 16);
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t T = tlen(rng);
    const std::size_t c = width(rng);
    const Tensor k = random_tensor({T, c}, rng, -8.0, 8.0);
    const Tensor v = random_tensor({T, c}, rng, -2.0, 2.0);
    BiWkvParams p = BiWkvParams::init(c);
    p.w_raw = random_tensor({c}, rng, -2.0, 3.0);
    p.u = random_tensor({c}, rng, -3.0, 3.0);
    const std::vector<double> w = p.decay();
    const Tensor out = bi_wkv_scan(k, v, p);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const long double ref = wkv_direct(k, v, w, p.u, t, ch);
        const double err = static_cast<double>(std::fabs(out[t * c + ch] - ref) / (std::fabs(ref) + 1e-9L));
        worst = std::max(worst, err);
      }
    }
  }
  return {worst < 1e-8, "1000 instances, max rel err " + fmt("%.3g", worst) + " (limit 1e-8)"};
}

// ---------------------------------------------------------------------------
// 2. Linear scaling

double best_time(const std::function<void()>& fn, int reps) {
  double best = INFINITY;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

Outcome linear_scaling() {
  const std::size_t c = 16;
  Rng rng(102);
  BiWkvParams p = BiWkvParams::init(c);
  auto inputs = [&](std::size_t T) {
    return std::pair{random_tensor({T, c}, rng, -3.0, 3.0), random_tensor({T, c}, rng, -1.0, 1.0)};
  };
  const auto [k1, v1] = inputs(512);
  const auto [k8, v8] = inputs(4096);
  const double scan_small = best_time([&] { (void)bi_wkv_scan(k1, v1, p); }, 40);
  const double scan_large = best_time([&] { (void)bi_wkv_scan(k8, v8, p); }, 10);
  const double naive_small = best_time([&] { (void)bi_wkv_naive(k1, v1, p); }, 5);
  const double naive_large = best_time([&] { (void)bi_wkv_naive(k8, v8, p); }, 2);
  const double scan_ratio = scan_large / scan_small;
  const double naive_ratio = naive_large / naive_small;
  return {scan_ratio < 12.0 && naive_ratio >= 40.0,
          "scan T=4096/T=512 ratio " + fmt("%.2f", scan_ratio) + " (limit < 12), quadratic baseline ratio " +
              fmt("%.1f", naive_ratio) + " (required >= 40), c=16"};
}

// ---------------------------------------------------------------------------
// 3. Gradient suite at desk dimensions

struct GradSuite {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;

  void add(const std::string& name, const mrt::testing::GradCheck& r) {
    ++checks;
    if (r.max_rel_err > worst || worst_name.empty()) {
      worst = std::max(worst, r.max_rel_err);
      worst_name = name + ":" + r.worst;
    }
  }
};

std::vector<std::pair<std::string, Tensor>> with_params(std::vector<std::pair<std::string, Tensor>> inputs,
                                                        const ParamList& params) {
  for (const auto& e : params.entries()) inputs.push_back(e);
  return inputs;
}

Outcome gradient_suite() {
  const ModelConfig cfg = ModelConfig::desk();
  const std::size_t c = cfg.channels;
  const std::size_t T = cfg.tokens_per_window();
  const std::size_t n = 32;  // coordinates sampled per input tensor
  Rng rng(103);
  GradSuite s;

  // Tensor primitives.
  {
    Tensor a = random_tensor({T, c}, rng, -2.0, 2.0);
    Tensor b = random_tensor({T, c}, rng, 0.5, 2.0);
    Tensor w = random_tensor({c, 2 * c}, rng);
    Tensor row = random_tensor({c}, rng);
    Tensor g = random_tensor({c}, rng, 0.5, 1.5);
    s.add("matmul", grad_check([&] { return project(matmul(a, w)); }, {{"a", a}, {"w", w}}, n));
    s.add("transpose", grad_check([&] { return project(transpose(a)); }, {{"a", a}}, n));
    s.add("add", grad_check([&] { return project(add(a, b)); }, {{"a", a}, {"b", b}}, n));
    s.add("sub", grad_check([&] { return project(sub(a, b)); }, {{"a", a}, {"b", b}}, n));
    s.add("mul", grad_check([&] { return project(mul(a, b)); }, {{"a", a}, {"b", b}}, n));
    s.add("div", grad_check([&] { return project(div(a, b)); }, {{"a", a}, {"b", b}}, n));
    s.add("add_row", grad_check([&] { return project(add_row(a, row)); }, {{"a", a}, {"row", row}}, n));
    s.add("mul_row", grad_check([&] { return project(mul_row(a, row)); }, {{"a", a}, {"row", row}}, n));
    s.add("layer_norm",
          grad_check([&] { return project(layer_norm(a, g, row)); }, {{"x", a}, {"gamma", g}, {"beta", row}}, n));
    s.add("sigmoid", grad_check([&] { return project(sigmoid(a)); }, {{"x", a}}, n));
    s.add("squared_relu", grad_check([&] { return project(squared_relu(a)); }, {{"x", a}}, n));
    s.add("gelu", grad_check([&] { return project(gelu(a)); }, {{"x", a}}, n));
    s.add("softmax", grad_check([&] { return project(softmax_lastdim(a)); }, {{"x", a}}, n));
    s.add("exp", grad_check([&] { return project(exp(a)); }, {{"x", a}}, n));
    s.add("log", grad_check([&] { return project(log(b)); }, {{"x", b}}, n));
    s.add("softplus", grad_check([&] { return project(softplus(a)); }, {{"x", a}}, n));
    s.add("abs", grad_check([&] { return project(abs(a)); }, {{"x", a}}, n));
    s.add("square", grad_check([&] { return project(square(a)); }, {{"x", a}}, n));
    s.add("normal_cdf", grad_check([&] { return project(normal_cdf(a)); }, {{"x", a}}, n));
    s.add("mean_rows", grad_check([&] { return project(mean_rows(a)); }, {{"x", a}}, n));
    s.add("sum", grad_check([&] { return sum(square(a)); }, {{"x", a}}, n));
    s.add("mean", grad_check([&] { return mean(square(a)); }, {{"x", a}}, n));
    s.add("slices", grad_check([&] { return project(concat_rows({slice_cols(a, 3, 9), slice_rows(slice_cols(b, 0, 9), 5, 20)})); },
                               {{"a", a}, {"b", b}}, n));
    Tensor img = random_tensor({3, 32, 32}, rng);
    s.add("patchify", grad_check([&] { return project(patchify(img, 16)); }, {{"img", img}}, n));
    Tensor logits = random_tensor({T, cfg.target_codebook}, rng, -3.0, 3.0);
    std::vector<std::size_t> targets(T);
    for (std::size_t i = 0; i < T; ++i) targets[i] = (i * 7) % cfg.target_codebook;
    s.add("cross_entropy", grad_check([&] { return cross_entropy(logits, targets); }, {{"logits", logits}}, n));
  }

  // Bi-RWKV pieces.
  {
    Tensor k = random_tensor({T, c}, rng, -3.0, 3.0);
    Tensor v = random_tensor({T, c}, rng);
    BiWkvParams p = BiWkvParams::init(c);
    p.w_raw = random_tensor({c}, rng, -1.0, 2.0);
    p.u = random_tensor({c}, rng);
    s.add("bi_wkv", grad_check([&] { return project(bi_wkv_scan(k, v, p)); },
                               {{"k", k}, {"v", v}, {"w_raw", p.w_raw}, {"u", p.u}}, n));
    BiRwkvBlockParams block = BiRwkvBlockParams::init(c, cfg.ratio, rng);
    ParamList sp;
    ParamList cp;
    block.spatial.collect("spatial", sp);
    block.channel.collect("channel", cp);
    mrt::testing::jitter(sp, rng);
    mrt::testing::jitter(cp, rng);
    Tensor x = random_tensor({T, c}, rng);
    s.add("spatial_mix", grad_check([&] { return project(spatial_mix(x, block.spatial)); }, with_params({{"x", x}}, sp), n));
    s.add("channel_mix", grad_check([&] { return project(channel_mix(x, block.channel)); }, with_params({{"x", x}}, cp), n));
    ParamList bp;
    block.collect("block", bp);
    s.add("bi_rwkv_block", grad_check([&] { return project(bi_rwkv_block(x, block)); }, with_params({{"x", x}}, bp), n));
  }

  // ViT block.
  {
    VitBlockParams p = VitBlockParams::init(c, cfg.heads, cfg.ratio, T, rng);
    ParamList vp;
    p.collect("vit", vp);
    mrt::testing::jitter(vp, rng);
    Tensor x = random_tensor({T, c}, rng);
    s.add("vit_block", grad_check([&] { return project(vit_block(x, p)); }, with_params({{"x", x}}, vp), n));
  }

  // RCM.
  {
    RcmParams p = RcmParams::init(cfg, rng);
    ParamList rp;
    p.collect("rcm", rp);
    mrt::testing::jitter(rp, rng);
    const std::size_t tokens = cfg.latents_per_window;
    const std::size_t cy = cfg.latent_channels;
    Tensor lat = random_tensor({tokens, c}, rng);
    Tensor yh = random_tensor({tokens, cy}, rng, -3.0, 3.0);
    Tensor ctx = random_tensor({tokens, cy}, rng);
    std::vector<std::pair<std::string, Tensor>> ana = {{"latents", lat}};
    std::vector<std::pair<std::string, Tensor>> syn = {{"y_hat", yh}};
    std::vector<std::pair<std::string, Tensor>> ent = {{"y_hat", yh}, {"ctx", ctx}};
    for (const auto& e : rp.entries()) {
      const std::string& name = e.first;
      if (name.find("analysis") != std::string::npos || name.find(".up") != std::string::npos) ana.push_back(e);
      if (name.find("synthesis") != std::string::npos || name.find(".down") != std::string::npos) syn.push_back(e);
      if (name.find("scctx") != std::string::npos) ent.push_back(e);
    }
    s.add("rcm_analysis", grad_check([&] { return project(rcm_analysis(lat, p)); }, ana, n));
    s.add("rcm_synthesis", grad_check([&] { return project(rcm_synthesis(yh, p)); }, syn, n));
    Tensor y = random_tensor({tokens, cy}, rng, -3.0, 3.0);
    std::vector<std::pair<std::string, Tensor>> hyp = {{"y", y}};
    for (const auto& e : rp.entries())
      if (e.first.find("hyper") != std::string::npos) hyp.push_back(e);
    s.add("hyper_analysis", grad_check([&] { return project(hyper_analysis(y, p)); }, hyp, n));
    s.add("scctx", grad_check(
                       [&] {
                         const EntropyParams e = scctx_entropy_params(yh, ctx, p);
                         return add(project(e.mu), project(e.sigma, 7));
                       },
                       ent, n));
    Tensor yr = random_tensor({tokens, cy}, rng, -4.0, 4.0);
    Tensor mu = random_tensor({tokens, cy}, rng, -1.0, 1.0);
    Tensor sigma = random_tensor({tokens, cy}, rng, 0.3, 3.0);
    s.add("rate_bits",
          grad_check([&] { return rate_bits(yr, mu, sigma); }, {{"y", yr}, {"mu", mu}, {"sigma", sigma}}, n));
    Tensor zs = random_tensor({tokens, cfg.hyper_channels}, rng);
    Tensor hl = random_tensor({cfg.hyper_channels}, rng);
    s.add("hyper_rate_bits", grad_check([&] { return hyper_rate_bits(zs, hl); }, {{"z", zs}, {"logits", hl}}, n));
  }

  // Losses.
  {
    Tensor z = random_tensor({128, cfg.hyper_channels}, rng, -2.0, 2.0);
    s.add("lfq_entropy", grad_check([&] { return lfq_entropy_loss(z); }, {{"z", z}}, n));
    s.add("lfq_commit", grad_check([&] { return lfq_commitment_loss(z, sign_ste(z)); }, {{"z", z}}, n));
    Tensor lh = random_tensor({32, c}, rng);
    const Tensor l = random_tensor({32, c}, rng);
    s.add("latent_alignment", grad_check([&] { return latent_alignment_loss(lh, l); }, {{"latents_hat", lh}}, n));
    const Tensor x = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    Tensor xh = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    const FeatureExtractor fe(5);
    PatchDiscriminator disc = PatchDiscriminator::init(rng);
    ParamList dp;
    disc.collect("disc", dp);
    mrt::testing::jitter(dp, rng);
    Tensor rate = Tensor::scalar(300.0);
    const LossWeights w;
    s.add("stage2_loss", grad_check([&] { return stage2_loss(x, xh, rate, w, fe, &disc).total; },
                                    {{"x_hat", xh}, {"rate", rate}}, n));
    Tensor real = random_tensor({64, 1}, rng, -3.0, 3.0);
    Tensor fake = random_tensor({64, 1}, rng, -3.0, 3.0);
    s.add("disc_loss", grad_check([&] { return discriminator_loss(real, fake); }, {{"real", real}, {"fake", fake}}, n));
    s.add("discriminator", grad_check([&] { return project(disc.logits(xh)); }, with_params({}, dp), n));
  }

  return {s.worst < 1e-4, std::to_string(s.checks) + " checks at c=" + std::to_string(c) + ", T=" +
                              std::to_string(T) + "; worst rel err " + fmt("%.3g", s.worst) + " (" + s.worst_name +
                              ", limit 1e-4)"};
}

// ---------------------------------------------------------------------------
// 4-5. Codec bit-exactness and rate accounting (shared encodes)

struct CodecRuns {
  std::size_t encodes = 0;
  std::size_t symbol_mismatches = 0;
  std::size_t header_mismatches = 0;
  std::size_t corruptions_tested = 0;
  std::size_t corruptions_unclean = 0;
  std::size_t rate_violations = 0;
  double worst_rate_excess = -INFINITY;  // (payload - est) - (0.02 est + 64)
  double codec_seconds = 0.0;
  double rate_seconds = 0.0;
};

CodecRuns run_codec() {
  CodecRuns r;
  Rng rng(104);
  for (int i = 0; i < 50; ++i) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.seed = 1000 + static_cast<std::uint64_t>(i);
    const MrtModel model = MrtModel::init(cfg);
    const std::size_t w = i % 2 == 0 ? 256 : 512;
    const Tensor image = random_tensor({3, 256, w}, rng, 0.0, 1.0);
    auto t0 = Clock::now();
    const CompressResult c = compress(model, image, static_cast<std::uint8_t>(i % 4));
    const DecompressResult d = decompress(model, c.bitstream);
    ++r.encodes;
    if (d.symbols.y_hat != c.symbols.y_hat || d.symbols.z_hat.signs != c.symbols.z_hat.signs) ++r.symbol_mismatches;
    if (d.header.orig_width != w || d.header.orig_height != 256 || d.image.shape() != Shape{3, 256, w} ||
        d.header.lambda_index != i % 4) {
      ++r.header_mismatches;
    }
    // Truncation at a random point and a random bit flip must raise DecodeError.
    std::uniform_int_distribution<std::size_t> pos(0, c.bitstream.size() - 1);
    std::vector<std::vector<std::uint8_t>> bad;
    bad.emplace_back(c.bitstream.begin(), c.bitstream.begin() + static_cast<std::ptrdiff_t>(pos(rng)));
    bad.push_back(c.bitstream);
    bad.back()[pos(rng)] ^= static_cast<std::uint8_t>(1u << (i % 8));
    for (const auto& b : bad) {
      ++r.corruptions_tested;
      try {
        (void)decompress(model, b);
        ++r.corruptions_unclean;
      } catch (const DecodeError&) {
      } catch (...) {
        ++r.corruptions_unclean;
      }
    }
    r.codec_seconds += seconds_since(t0);
    t0 = Clock::now();
    const double est = c.estimated_bits();
    const double excess = std::fabs(static_cast<double>(c.payload_bits()) - est) - (0.02 * est + 64.0);
    r.worst_rate_excess = std::max(r.worst_rate_excess, excess);
    if (excess > 0.0) ++r.rate_violations;
    r.rate_seconds += seconds_since(t0);
  }
  return r;
}

Outcome codec_exactness(const CodecRuns& r) {
  const bool ok = r.symbol_mismatches == 0 && r.header_mismatches == 0 && r.corruptions_unclean == 0;
  std::ostringstream os;
  os << r.encodes << " desk encodes (256x256 and 512x256), " << r.symbol_mismatches << " symbol mismatches, "
     << r.header_mismatches << " header mismatches, " << r.corruptions_unclean << "/" << r.corruptions_tested
     << " corrupted streams without a clean DecodeError";
  return {ok && r.codec_seconds < 180.0, os.str() + "; limit 180 s", r.codec_seconds};
}

Outcome rate_accounting(const CodecRuns& r) {
  std::ostringstream os;
  os << r.rate_violations << "/" << r.encodes
     << " images outside |payload - estimate| <= 2% + 64 bits; worst margin " << fmt("%.1f", r.worst_rate_excess)
     << " bits (must be <= 0)";
  return {r.rate_violations == 0, os.str(), r.rate_seconds};
}

// ---------------------------------------------------------------------------
// 6. Shape contract

Outcome shape_contract() {
  const MrtModel model = MrtModel::init(ModelConfig::desk());
  Rng rng(106);
  const Tensor a = random_tensor({3, 256, 256}, rng, 0.0, 1.0);
  const Tensor b = random_tensor({3, 512, 512}, rng, 0.0, 1.0);
  const std::size_t na = encode_to_latents(a, model.encoder, model.config).rows();
  const std::size_t nb = encode_to_latents(b, model.encoder, model.config).rows();
  const CompressResult cb = compress(model, b);
  const DecompressResult db = decompress(model, cb.bitstream);
  const bool ok = na == 32 && nb == 128 && cb.symbols.tokens == 128 && db.image.shape() == b.shape();
  return {ok, "256x256 -> " + std::to_string(na) + " tokens (want 32), 512x512 -> " + std::to_string(nb) +
                  " tokens (want 128), one parameter set, decoded " + to_string(db.image.shape())};
}

// ---------------------------------------------------------------------------
// 7. LFQ contract

Outcome lfq_contract() {
  Rng rng(107);
  const Tensor z = random_tensor({500, 14}, rng, -3.0, 3.0);
  const LfqCode code = lfq_quantize(z);
  bool binary = true;
  for (auto s : code.signs) binary = binary && (s == 1 || s == -1);
  const auto idx = code.indices();
  const bool roundtrip = LfqCode::from_indices(idx, 14).signs == code.signs;
  std::vector<std::uint32_t> all(16384);
  for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  const bool bijection = LfqCode::from_indices(all, 14).indices() == all;
  bool rejects_16384 = false;
  try {
    (void)LfqCode::from_indices(std::vector<std::uint32_t>{16384}, 14);
  } catch (const Error&) {
    rejects_16384 = true;
  }
  std::uint32_t max_index = 0;
  for (auto i : idx) max_index = std::max(max_index, i);
  const double h = codebook_entropy(all);
  const bool ok = binary && roundtrip && bijection && rejects_16384 && max_index < 16384 && std::fabs(h - 14.0) <= 1e-9;
  return {ok, std::string("signs in {-1,+1}: ") + (binary ? "yes" : "no") + ", roundtrip: " +
                  (roundtrip && bijection ? "yes" : "no") + ", index space 16384: " + (rejects_16384 ? "yes" : "no") +
                  ", uniform entropy " + fmt("%.12f", h) + " (14 +- 1e-9)"};
}

// ---------------------------------------------------------------------------
// 8-10. Training criteria (shared desk stage-1 run)

const std::uint64_t kTrainSeed = 1;

std::vector<Tensor> train_batch() { return synthetic_batch(4, 256, 256, kTrainSeed); }

TrainConfig desk_train_config(int stage) {
  TrainConfig tc;
  tc.stage = stage;
  tc.batch = 4;
  tc.seed = kTrainSeed;
  return tc;
}

struct Stage1Run {
  MrtModel at_200;
  MrtModel at_300;
  double initial = 0.0;
  double final_loss = 0.0;
  double seconds_200 = 0.0;
  double seconds_300 = 0.0;
  bool finite = true;
};

Stage1Run run_stage1() {
  Stage1Run r;
  MrtModel model = MrtModel::init(ModelConfig::desk());
  const auto t0 = Clock::now();
  Stage1Trainer trainer(model, desk_train_config(1), train_batch());
  r.initial = trainer.evaluate().total;
  for (int s = 1; s <= 300; ++s) {
    r.finite = r.finite && std::isfinite(trainer.step().total);
    if (s == 200) {
      r.seconds_200 = seconds_since(t0);
      r.at_200 = deserialize_checkpoint(serialize_checkpoint(model));
    }
  }
  r.final_loss = trainer.evaluate().total;
  r.seconds_300 = seconds_since(t0);
  r.at_300 = deserialize_checkpoint(serialize_checkpoint(model));
  return r;
}

const Tensor& erf_image() {
  static const Tensor image = [] {
    Rng rng(108);
    return synthetic_image(256, 512, rng);
  }();
  return image;
}

Outcome erf_dichotomy(const Stage1Run& s1) {
  auto t0 = Clock::now();
  ModelConfig local_cfg = ModelConfig::desk();
  local_cfg.rwkv_blocks_per_layer = 0;
  MrtModel local = MrtModel::init(local_cfg);
  {
    Stage1Trainer trainer(local, desk_train_config(1), train_batch());
    for (int s = 0; s < 200; ++s) trainer.step();
  }
  double with = 0.0;
  double without = 0.0;
  for (std::size_t window : {0u, 1u}) {
    with += compute_erf(s1.at_200, erf_image(), window).outside_fraction / 2.0;
    without += compute_erf(local, erf_image(), window).outside_fraction / 2.0;
  }
  const double runtime = s1.seconds_200 + seconds_since(t0);
  const bool ok = with > 0.0 && with >= 2.0 * without && runtime < 600.0;
  return {ok,
          "outside-window gradient mass after 200 stage-1 steps: with Bi-RWKV " + fmt("%.4g", with) +
              ", without " + fmt("%.4g", without) + " (need with >= 2x without); limit 600 s",
          runtime};
}

bool same_bits(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto da = a.entries()[i].second.data();
    const auto db = b.entries()[i].second.data();
    if (!std::equal(da.begin(), da.end(), db.begin(), db.end())) return false;
  }
  return true;
}

const std::size_t kStage2Steps = 500;

// Stage-2 run at table index 0 (lambda 20); also the first point of the lambda sweep.
Outcome desk_training(const Stage1Run& s1, MrtModel& model) {
  const auto t0 = Clock::now();
  model = deserialize_checkpoint(serialize_checkpoint(s1.at_300));
  const MrtModel reference = deserialize_checkpoint(serialize_checkpoint(s1.at_300));
  bool finite = true;
  Stage2Terms last{};
  {
    Stage2Trainer trainer(model, desk_train_config(2), train_batch());
    for (std::size_t s = 0; s < kStage2Steps; ++s) {
      last = trainer.step();
      for (double v : {last.total, last.l1, last.perceptual, last.adv, last.rate, last.disc}) {
        finite = finite && std::isfinite(v);
      }
    }
  }
  const bool frozen = same_bits(model.encoder_params(), reference.encoder_params());
  const double drop = 1.0 - s1.final_loss / s1.initial;
  const double runtime = s1.seconds_300 + seconds_since(t0);
  const bool ok = drop >= 0.5 && s1.finite && finite && frozen && runtime < 1200.0;
  return {ok,
          "stage-1 loss " + fmt("%.4g", s1.initial) + " -> " + fmt("%.4g", s1.final_loss) + " after 300 steps (drop " +
              fmt("%.1f", 100.0 * drop) + "%, need >= 50%); stage-2 500 steps: terms finite " +
              (finite ? "yes" : "no") + ", encoder bitwise frozen " + (frozen ? "yes" : "no") +
              " (final l1 " + fmt("%.4g", last.l1) + ", bpp " + fmt("%.4g", last.rate) + "); limit 1200 s",
          runtime};
}

struct SweepPoint {
  double bpp = 0.0;
  std::size_t nonzero = 0;
  std::size_t symbols = 0;
};

SweepPoint measure(const MrtModel& model, std::size_t k) {
  static const auto corpus = synthetic_batch(4, 256, 256, 109);
  SweepPoint p;
  for (const auto& x : corpus) {
    const CompressResult c = compress(model, x, static_cast<std::uint8_t>(k));
    p.bpp += c.bpp() / static_cast<double>(corpus.size());
    p.symbols += c.symbols.y_hat.size();
    p.nonzero += static_cast<std::size_t>(std::ranges::count_if(c.symbols.y_hat, [](auto v) { return v != 0; }));
  }
  return p;
}

// Same stage-2 protocol as the desk training run, one run per lambda.
Outcome lambda_trend(const Stage1Run& s1, const MrtModel& lambda20) {
  const auto t0 = Clock::now();
  std::vector<SweepPoint> points = {measure(lambda20, 0)};
  for (std::size_t k = 1; k < kLambdaTable.size(); ++k) {
    MrtModel model = deserialize_checkpoint(serialize_checkpoint(s1.at_300));
    TrainConfig tc = desk_train_config(2);
    tc.lambda_index = static_cast<int>(k);
    tc.weights.lambda = kLambdaTable[k];
    Stage2Trainer trainer(model, tc, train_batch());
    for (std::size_t s = 0; s < kStage2Steps; ++s) trainer.step();
    points.push_back(measure(model, k));
  }
  // Table order is lambda = 20, 10, 5, 2.5: bpp must not decrease along it. Equal rates at both ends mean
  // no rate was traded for distortion, so the end points must differ.
  bool ok = points.back().bpp > points.front().bpp;
  for (std::size_t k = 1; k < points.size(); ++k) ok = ok && points[k].bpp >= points[k - 1].bpp;
  std::ostringstream os;
  os << "bpp on 4 held-out synthetic images after " << kStage2Steps << " stage-2 steps:";
  for (std::size_t k = 0; k < points.size(); ++k) {
    os << " lambda " << kLambdaTable[k] << " -> " << fmt("%.5f", points[k].bpp) << " (" << points[k].nonzero << "/"
       << points[k].symbols << " nonzero latents)";
  }
  os << "; need non-increasing in lambda and lambda 2.5 above lambda 20";
  return {ok, os.str(), seconds_since(t0)};
}

// ---------------------------------------------------------------------------
// 11. Redundancy oracle

Outcome redundancy_oracle() {
  Rng rng(111);
  std::uniform_int_distribution<std::size_t> dim(2, 40);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = dim(rng);
    const std::size_t c = dim(rng);
    const Tensor f = random_tensor({n, c}, rng, -3.0, 3.0);
    auto at = [&](std::size_t i, std::size_t d) { return static_cast<long double>(f[i * c + d]); };
    long double cos = 0, l2 = 0, mfc = 0;
    std::size_t pairs = 0, ch_pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        long double dot = 0, ni = 0, nj = 0, dist = 0;
        for (std::size_t d = 0; d < c; ++d) {
          dot += at(i, d) * at(j, d);
          ni += at(i, d) * at(i, d);
          nj += at(j, d) * at(j, d);
          dist += (at(i, d) - at(j, d)) * (at(i, d) - at(j, d));
        }
        cos += dot / std::sqrt(ni * nj);
        l2 += std::sqrt(dist);
        ++pairs;
      }
    }
    for (std::size_t a = 0; a < c; ++a) {
      for (std::size_t b = a + 1; b < c; ++b) {
        long double ma = 0, mb = 0;
        for (std::size_t i = 0; i < n; ++i) {
          ma += at(i, a);
          mb += at(i, b);
        }
        ma /= n;
        mb /= n;
        long double sab = 0, saa = 0, sbb = 0;
        for (std::size_t i = 0; i < n; ++i) {
          sab += (at(i, a) - ma) * (at(i, b) - mb);
          saa += (at(i, a) - ma) * (at(i, a) - ma);
          sbb += (at(i, b) - mb) * (at(i, b) - mb);
        }
        mfc += std::fabs(sab / std::sqrt(saa * sbb));
        ++ch_pairs;
      }
    }
    const RedundancyReport r = redundancy_metrics(f);
    worst = std::max({worst, static_cast<double>(std::fabs(r.mean_cosine - cos / pairs)),
                      static_cast<double>(std::fabs(r.mean_l2 - l2 / pairs)),
                      static_cast<double>(std::fabs(r.mfc - (ch_pairs ? mfc / ch_pairs : 0.0L)))});
  }
  return {worst < 1e-9, "20 random matrices, max abs deviation " + fmt("%.3g", worst) + " (limit 1e-9)"};
}

// Comma-separated criterion ids following `flag`.
std::set<int> parse_ids(int argc, char** argv, const std::string& flag) {
  std::set<int> ids;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) != flag) continue;
    std::stringstream ss(argv[i + 1]);
    std::string item;
    while (std::getline(ss, item, ',')) ids.insert(std::stoi(item));
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  // --only 1,4 runs a subset; --known-failure 10 still prints FAIL but does not set the exit status.
  const std::set<int> only = parse_ids(argc, argv, "--only");
  const std::set<int> known = parse_ids(argc, argv, "--known-failure");
  auto wanted = [&](int id) { return only.empty() || only.contains(id); };
  int failures = 0;
  int known_failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s [%d] %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), o.runtime);
    std::fflush(stdout);
    if (!o.pass) ++(known.contains(id) ? known_failures : failures);
  };
  auto timed = [&](int id, const char* name, const std::function<Outcome()>& fn, double limit) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o = fn();
    o.runtime = seconds_since(t0);
    if (limit > 0.0 && o.runtime >= limit) {
      o.pass = false;
      o.detail += "; runtime over the " + fmt("%.0f", limit) + " s limit";
    }
    report(id, name, o);
  };

  timed(1, "BiWKV oracle equivalence", wkv_oracle, 60.0);
  timed(2, "Linear scaling", linear_scaling, 120.0);
  timed(3, "Gradient suite", gradient_suite, 300.0);
  if (wanted(4) || wanted(5)) {
    const CodecRuns runs = run_codec();
    if (wanted(4)) report(4, "Codec bit-exactness", codec_exactness(runs));
    if (wanted(5)) report(5, "Rate accounting", rate_accounting(runs));
  }
  timed(6, "Shape contract", shape_contract, 0.0);
  timed(7, "LFQ contract", lfq_contract, 0.0);
  if (wanted(8) || wanted(9) || wanted(10)) {
    const Stage1Run s1 = run_stage1();
    if (wanted(8)) report(8, "ERF dichotomy", erf_dichotomy(s1));
    MrtModel lambda20;
    const Outcome training = desk_training(s1, lambda20);
    if (wanted(9)) report(9, "Desk training", training);
    if (wanted(10)) report(10, "Lambda trend", lambda_trend(s1, lambda20));
  }
  timed(11, "Redundancy oracle", redundancy_oracle, 0.0);
  if (failures == 0 && known_failures == 0) {
    std::printf("ALL PASS\n");
  } else {
    std::printf("FAILURES: %d criteria failed, %d of them listed as known failures\n", failures + known_failures,
                known_failures);
  }
  return failures == 0 ? 0 : 1;
}
