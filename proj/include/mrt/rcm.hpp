// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrt/birwkv.hpp"
#include "mrt/mrt_transform.hpp"
#include "mrt/nn.hpp"

namespace mrt {

inline constexpr double kSigmaMin = 0.01;
inline constexpr double kProbabilityFloor = 1.0 / 65536.0;

/// One stage of the spatial-channel context model: the concatenation of the
/// hyper context and the visible part of y_hat, mixed by a Bi-RWKV block,
/// projected to (mu, raw sigma) for every channel.
struct ScctxStageParams {
  Linear in;   // 2*c_y -> c_y
  BiRwkvBlockParams block;
  Linear out;  // c_y -> 2*c_y

  static ScctxStageParams init(std::size_t cy, std::size_t ratio, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

inline constexpr std::size_t kScctxStages = 4;

struct RcmParams {
  Mlp up;                                    // c -> c_y
  std::vector<BiRwkvBlockParams> analysis;   // on c_y
  std::vector<BiRwkvBlockParams> synthesis;  // on c_y
  Mlp down;                                  // c_y -> c
  std::vector<BiRwkvBlockParams> hyper;      // two blocks on c_y
  Mlp hyper_down;                            // c_y -> c_z
  Mlp hyper_up;                              // c_z -> c_y
  std::array<ScctxStageParams, kScctxStages> scctx;
  Tensor hyper_logits;                       // [c_z], factorized Bernoulli prior of z_hat bits

  static RcmParams init(const ModelConfig& cfg, Rng& rng);
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Per-element Gaussian parameters of y_hat plus the hyper prior logits.
struct EntropyParams {
  Tensor mu;     // [n x c_y]
  Tensor sigma;  // [n x c_y], >= kSigmaMin
  Tensor hyper_logits;
};

/// Sign-quantized hyper representation. Bit d of a token's index is set
/// when its sign d is +1.
struct LfqCode {
  std::size_t tokens = 0;
  std::size_t dims = 0;
  std::vector<std::int8_t> signs;  // [tokens x dims], each +1 or -1

  std::uint32_t index(std::size_t token) const;
  std::vector<std::uint32_t> indices() const;
  Tensor to_tensor() const;
  static LfqCode from_indices(std::span<const std::uint32_t> indices, std::size_t dims);
};

Tensor rcm_analysis(const Tensor& latents, const RcmParams& p);
Tensor rcm_synthesis(const Tensor& y_hat, const RcmParams& p);

/// Round half away from zero (inference quantizer).
Tensor quantize_round(const Tensor& y);
/// Training quantizers: additive U(-1/2, 1/2) noise for the rate path and
/// straight-through rounding for the reconstruction path.
Tensor quantize_noise(const Tensor& y, Rng& rng);
inline Tensor quantize_ste(const Tensor& y) { return round_ste(y); }

Tensor hyper_analysis(const Tensor& y, const RcmParams& p);
/// q(z) = 2 * [z >= 0] - 1 per element.
LfqCode lfq_quantize(const Tensor& z);
/// Maps LFQ signs to the c_y-wide context of the entropy model.
Tensor hyper_synthesis(const Tensor& z_hat, const RcmParams& p);

/// Elements of `slice` (0..3) in the (channel group, position parity)
/// schedule: (0, even), (0, odd), (1, even), (1, odd).
std::vector<std::uint8_t> scctx_slice_mask(std::size_t slice, std::size_t tokens, std::size_t cy);
/// Elements visible to `slice`: the union of all earlier slices.
std::vector<std::uint8_t> scctx_context_mask(std::size_t slice, std::size_t tokens, std::size_t cy);

/// (mu, sigma) from stage `slice` given y_hat (only the context-visible part
/// is read). Values outside the slice are meaningless.
EntropyParams scctx_stage(std::size_t slice, const Tensor& y_hat, const Tensor& hyper_context, const RcmParams& p);

/// Parameters for every element, each computed by its own stage.
/// Differentiable; the value of slice s depends only on slices < s.
EntropyParams scctx_entropy_params(const Tensor& y_hat, const Tensor& hyper_context, const RcmParams& p);

/// Walks the slice schedule in order for a decoder that only knows the
/// slices decoded so far. Asking for a slice out of order throws.
class ScctxSchedule {
 public:
  ScctxSchedule(Tensor hyper_context, const RcmParams& p);

  std::size_t next_slice() const { return next_; }
  bool done() const { return next_ == kScctxStages; }
  EntropyParams params_for(std::size_t slice) const;
  /// Stores the decoded values of the current slice (only slice elements of
  /// `values` are read) and moves to the next one.
  void commit(std::size_t slice, std::span<const double> values);
  const Tensor& known() const { return known_; }

 private:
  Tensor context_;
  const RcmParams* params_;
  Tensor known_;
  std::size_t next_ = 0;
};

/// Differentiable bits of y_hat under the discretized Gaussian:
/// sum of -log2 [Phi((y-mu+1/2)/sigma) - Phi((y-mu-1/2)/sigma)], with each
/// probability floored at 2^-16.
Tensor rate_bits(const Tensor& y_hat, const Tensor& mu, const Tensor& sigma);
double rate_estimate(const Tensor& y_hat, const EntropyParams& params);

/// Differentiable bits of z_hat signs under per-dimension Bernoulli logits.
Tensor hyper_rate_bits(const Tensor& z_hat, const Tensor& logits);
double hyper_rate_estimate(const LfqCode& code, const Tensor& logits);

/// Shannon entropy in bits of the empirical index histogram.
double codebook_entropy(std::span<const std::uint32_t> indices);

/// Nearest-codeword assignment for the vector-quantized hyper baseline.
std::vector<std::uint32_t> vq_assign(const Tensor& z, const Tensor& codebook);

/// Everything the training losses need from one RCM pass.
struct RcmForward {
  Tensor y;
  Tensor y_hat;        // straight-through rounded
  Tensor y_rate;       // noisy proxy (training) or y_hat
  Tensor z;
  Tensor z_hat;        // straight-through signs
  EntropyParams entropy;
  Tensor latent_bits;  // scalar
  Tensor hyper_bits;   // scalar
  Tensor latents_hat;  // synthesis output, same shape as the input latents
};

/// `noise` selects the additive-noise rate proxy; without it the rate is
/// measured on the rounded values.
RcmForward rcm_forward(const Tensor& latents, const RcmParams& p, Rng* noise);

}  // namespace mrt
