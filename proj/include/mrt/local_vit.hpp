// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "mrt/nn.hpp"

namespace mrt {

/// Pre-LN windowed transformer block. The learned per-slot position table is
/// shared across windows and is added to the normalized attention input, so
/// zeroed output projections leave the residual stream untouched.
struct VitBlockParams {
  std::size_t heads = 1;
  LayerNormParams ln_attn;
  Linear qkv;       // c -> 3c
  Linear attn_out;  // c -> c
  LayerNormParams ln_mlp;
  Linear mlp_up;    // c -> r*c
  Linear mlp_down;  // r*c -> c
  Tensor pos;       // [window_tokens x c]

  static VitBlockParams init(std::size_t c, std::size_t heads, std::size_t ratio, std::size_t window_tokens,
                             Rng& rng);
  std::size_t window_tokens() const { return pos.dim(0); }
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Multi-head softmax attention inside one window plus its residual.
/// `x` must hold exactly window_tokens() rows.
Tensor window_self_attention(const Tensor& x, const VitBlockParams& p);

/// Row-stochastic attention weights of one head, for inspection.
Tensor attention_weights(const Tensor& x, const VitBlockParams& p, std::size_t head);

/// Attention sub-block then GELU MLP sub-block, both residual.
Tensor vit_block(const Tensor& x, const VitBlockParams& p);

}  // namespace mrt
