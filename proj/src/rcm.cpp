// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/rcm.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace mrt {

namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

}  // namespace

ScctxStageParams ScctxStageParams::init(std::size_t cy, std::size_t ratio, Rng& rng) {
  Linear in = Linear::init(2 * cy, cy, rng);
  BiRwkvBlockParams block = BiRwkvBlockParams::init(cy, ratio, rng);
  Linear out = Linear::init(cy, 2 * cy, rng);
  return ScctxStageParams{std::move(in), std::move(block), std::move(out)};
}

void ScctxStageParams::collect(const std::string& prefix, ParamList& out) const {
  in.collect(prefix + ".in", out);
  block.collect(prefix + ".block", out);
  this->out.collect(prefix + ".out", out);
}

RcmParams RcmParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t cy = cfg.latent_channels;
  const std::size_t cz = cfg.hyper_channels;
  RcmParams p;
  p.up = Mlp::init(c, cy, rng);
  p.analysis.push_back(BiRwkvBlockParams::init(cy, cfg.ratio, rng));
  p.synthesis.push_back(BiRwkvBlockParams::init(cy, cfg.ratio, rng));
  p.down = Mlp::init(cy, c, rng);
  for (int i = 0; i < 2; ++i) p.hyper.push_back(BiRwkvBlockParams::init(cy, cfg.ratio, rng));
  p.hyper_down = Mlp::init(cy, cz, rng);
  p.hyper_up = Mlp::init(cz, cy, rng);
  for (auto& stage : p.scctx) stage = ScctxStageParams::init(cy, cfg.ratio, rng);
  p.hyper_logits = zeros_param({cz});
  return p;
}

void RcmParams::zero_output_projections() {
  for (auto* blocks : {&analysis, &synthesis, &hyper}) {
    for (auto& b : *blocks) b.zero_output_projections();
  }
  for (auto& s : scctx) s.block.zero_output_projections();
}

void RcmParams::collect(const std::string& prefix, ParamList& out) const {
  up.collect(prefix + ".up", out);
  for (std::size_t i = 0; i < analysis.size(); ++i) analysis[i].collect(prefix + ".analysis" + std::to_string(i), out);
  for (std::size_t i = 0; i < synthesis.size(); ++i) {
    synthesis[i].collect(prefix + ".synthesis" + std::to_string(i), out);
  }
  down.collect(prefix + ".down", out);
  for (std::size_t i = 0; i < hyper.size(); ++i) hyper[i].collect(prefix + ".hyper" + std::to_string(i), out);
  hyper_down.collect(prefix + ".hyper_down", out);
  hyper_up.collect(prefix + ".hyper_up", out);
  for (std::size_t i = 0; i < scctx.size(); ++i) scctx[i].collect(prefix + ".scctx" + std::to_string(i), out);
  out.add(prefix + ".hyper_logits", hyper_logits);
}

std::uint32_t LfqCode::index(std::size_t token) const {
  std::uint32_t idx = 0;
  for (std::size_t d = 0; d < dims; ++d) {
    if (signs[token * dims + d] > 0) idx |= std::uint32_t{1} << d;
  }
  return idx;
}

std::vector<std::uint32_t> LfqCode::indices() const {
  std::vector<std::uint32_t> out(tokens);
  for (std::size_t t = 0; t < tokens; ++t) out[t] = index(t);
  return out;
}

Tensor LfqCode::to_tensor() const {
  std::vector<double> v(signs.begin(), signs.end());
  return Tensor(Shape{tokens, dims}, std::move(v));
}

LfqCode LfqCode::from_indices(std::span<const std::uint32_t> indices, std::size_t dims) {
  LfqCode code;
  code.tokens = indices.size();
  code.dims = dims;
  code.signs.resize(indices.size() * dims);
  for (std::size_t t = 0; t < indices.size(); ++t) {
    if (dims < 32 && (indices[t] >> dims) != 0) throw Error("LFQ index out of range for " + std::to_string(dims) + " bits");
    for (std::size_t d = 0; d < dims; ++d) code.signs[t * dims + d] = ((indices[t] >> d) & 1U) ? 1 : -1;
  }
  return code;
}

Tensor rcm_analysis(const Tensor& latents, const RcmParams& p) {
  Tensor y = p.up(latents);
  for (const auto& b : p.analysis) y = bi_rwkv_block(y, b);
  return y;
}

Tensor rcm_synthesis(const Tensor& y_hat, const RcmParams& p) {
  Tensor x = y_hat;
  for (const auto& b : p.synthesis) x = bi_rwkv_block(x, b);
  return p.down(x);
}

Tensor quantize_round(const Tensor& y) {
  Tensor out(y.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = round_half_away(y[i]);
  return out;
}

Tensor quantize_noise(const Tensor& y, Rng& rng) {
  return add(y, uniform(y.shape(), -0.5, 0.5, rng));
}

Tensor hyper_analysis(const Tensor& y, const RcmParams& p) {
  Tensor h = y;
  for (const auto& b : p.hyper) h = bi_rwkv_block(h, b);
  return p.hyper_down(h);
}

LfqCode lfq_quantize(const Tensor& z) {
  LfqCode code;
  code.tokens = z.rows();
  code.dims = z.cols();
  code.signs.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) code.signs[i] = z[i] >= 0.0 ? 1 : -1;
  return code;
}

Tensor hyper_synthesis(const Tensor& z_hat, const RcmParams& p) { return p.hyper_up(z_hat); }

std::vector<std::uint8_t> scctx_slice_mask(std::size_t slice, std::size_t tokens, std::size_t cy) {
  if (slice >= kScctxStages) throw Error("scctx: slice " + std::to_string(slice) + " out of range");
  const std::size_t half = cy / 2;
  const std::size_t group = slice / 2;
  const std::size_t parity = slice % 2;
  std::vector<std::uint8_t> m(tokens * cy, 0);
  for (std::size_t t = parity; t < tokens; t += 2) {
    for (std::size_t d = group * half; d < (group + 1) * half; ++d) m[t * cy + d] = 1;
  }
  return m;
}

std::vector<std::uint8_t> scctx_context_mask(std::size_t slice, std::size_t tokens, std::size_t cy) {
  std::vector<std::uint8_t> m(tokens * cy, 0);
  for (std::size_t s = 0; s < slice; ++s) {
    const auto sm = scctx_slice_mask(s, tokens, cy);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] |= sm[i];
  }
  return m;
}

EntropyParams scctx_stage(std::size_t slice, const Tensor& y_hat, const Tensor& hyper_context, const RcmParams& p) {
  if (slice >= kScctxStages) throw Error("scctx: slice " + std::to_string(slice) + " out of range");
  const std::size_t n = y_hat.rows();
  const std::size_t cy = y_hat.cols();
  if (hyper_context.rows() != n || hyper_context.cols() != cy) {
    throw ShapeError("scctx: hyper context " + to_string(hyper_context.shape()) + " vs y_hat " +
                     to_string(y_hat.shape()));
  }
  const auto visible = scctx_context_mask(slice, n, cy);
  const ScctxStageParams& sp = p.scctx[slice];
  const Tensor h = bi_rwkv_block(sp.in(concat_cols({hyper_context, mask_select(y_hat, visible)})), sp.block);
  const Tensor o = sp.out(h);
  return EntropyParams{slice_cols(o, 0, cy), clamp_min(softplus(slice_cols(o, cy, cy)), kSigmaMin), p.hyper_logits};
}

EntropyParams scctx_entropy_params(const Tensor& y_hat, const Tensor& hyper_context, const RcmParams& p) {
  const std::size_t n = y_hat.rows();
  const std::size_t cy = y_hat.cols();
  Tensor mu;
  Tensor sigma;
  for (std::size_t s = 0; s < kScctxStages; ++s) {
    const EntropyParams st = scctx_stage(s, y_hat, hyper_context, p);
    const auto mask = scctx_slice_mask(s, n, cy);
    const Tensor m = mask_select(st.mu, mask);
    const Tensor sg = mask_select(st.sigma, mask);
    mu = s == 0 ? m : add(mu, m);
    sigma = s == 0 ? sg : add(sigma, sg);
  }
  return EntropyParams{mu, sigma, p.hyper_logits};
}

ScctxSchedule::ScctxSchedule(Tensor hyper_context, const RcmParams& p)
    : context_(std::move(hyper_context)), params_(&p), known_(context_.shape()) {}

EntropyParams ScctxSchedule::params_for(std::size_t slice) const {
  if (slice != next_) {
    throw Error("scctx schedule violation: slice " + std::to_string(slice) + " requested while slice " +
                std::to_string(next_) + " is next");
  }
  return scctx_stage(slice, known_, context_, *params_);
}

void ScctxSchedule::commit(std::size_t slice, std::span<const double> values) {
  if (slice != next_) throw Error("scctx schedule violation: committing slice out of order");
  if (values.size() != known_.size()) throw ShapeError("scctx: committed values have the wrong size");
  const auto mask = scctx_slice_mask(slice, known_.rows(), known_.cols());
  Tensor updated = known_.clone();
  auto d = updated.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask[i]) d[i] = values[i];
  known_ = updated;
  ++next_;
}

Tensor rate_bits(const Tensor& y_hat, const Tensor& mu, const Tensor& sigma) {
  // The bin mass is symmetric in (y - mu); evaluating it at -|y - mu| keeps
  // both CDF arguments on the lower tail where erfc is accurate.
  const Tensor neg_dist = scale(abs(sub(y_hat, mu)), -1.0);
  const Tensor upper = normal_cdf(div(add_scalar(neg_dist, 0.5), sigma));
  const Tensor lower = normal_cdf(div(add_scalar(neg_dist, -0.5), sigma));
  const Tensor prob = clamp_min(sub(upper, lower), kProbabilityFloor);
  return scale(sum(log(prob)), -kInvLn2);
}

double rate_estimate(const Tensor& y_hat, const EntropyParams& params) {
  return rate_bits(detach(y_hat), detach(params.mu), detach(params.sigma)).item();
}

Tensor hyper_rate_bits(const Tensor& z_hat, const Tensor& logits) {
  return scale(sum(softplus(scale(mul_row(z_hat, logits), -1.0))), kInvLn2);
}

double hyper_rate_estimate(const LfqCode& code, const Tensor& logits) {
  return hyper_rate_bits(code.to_tensor(), detach(logits)).item();
}

double codebook_entropy(std::span<const std::uint32_t> indices) {
  if (indices.empty()) throw Error("codebook_entropy: no codes");
  std::map<std::uint32_t, std::size_t> hist;
  for (std::uint32_t i : indices) ++hist[i];
  const double n = static_cast<double>(indices.size());
  double h = 0.0;
  for (const auto& [idx, count] : hist) {
    const double p = static_cast<double>(count) / n;
    h -= p * std::log2(p);
  }
  return h;
}

std::vector<std::uint32_t> vq_assign(const Tensor& z, const Tensor& codebook) {
  if (z.cols() != codebook.cols()) throw ShapeError("vq_assign: codeword width mismatch");
  const std::size_t n = z.rows();
  const std::size_t k = codebook.rows();
  const std::size_t d = z.cols();
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::size_t e = 0; e < d; ++e) {
        const double diff = z[i * d + e] - codebook[j * d + e];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        out[i] = static_cast<std::uint32_t>(j);
      }
    }
  }
  return out;
}

RcmForward rcm_forward(const Tensor& latents, const RcmParams& p, Rng* noise) {
  RcmForward f;
  f.y = rcm_analysis(latents, p);
  f.y_hat = quantize_ste(f.y);
  f.y_rate = noise != nullptr ? quantize_noise(f.y, *noise) : f.y_hat;
  f.z = hyper_analysis(f.y, p);
  f.z_hat = sign_ste(f.z);
  const Tensor context = hyper_synthesis(f.z_hat, p);
  f.entropy = scctx_entropy_params(f.y_hat, context, p);
  f.latent_bits = rate_bits(f.y_rate, f.entropy.mu, f.entropy.sigma);
  f.hyper_bits = hyper_rate_bits(f.z_hat, p.hyper_logits);
  f.latents_hat = rcm_synthesis(f.y_hat, p);
  return f;
}

}  // namespace mrt
