// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/local_vit.hpp"

#include <cmath>

namespace mrt {

VitBlockParams VitBlockParams::init(std::size_t c, std::size_t heads, std::size_t ratio,
                                    std::size_t window_tokens, Rng& rng) {
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("vit block: " + std::to_string(heads) + " heads do not divide width " + std::to_string(c));
  }
  VitBlockParams p;
  p.heads = heads;
  p.ln_attn = LayerNormParams::init(c);
  p.qkv = Linear::init(c, 3 * c, rng);
  p.attn_out = Linear::init(c, c, rng);
  p.ln_mlp = LayerNormParams::init(c);
  p.mlp_up = Linear::init(c, ratio * c, rng);
  p.mlp_down = Linear::init(ratio * c, c, rng);
  p.pos = randn({window_tokens, c}, 0.02, rng);
  return p;
}

void VitBlockParams::zero_output_projections() {
  attn_out.zero();
  mlp_down.zero();
}

void VitBlockParams::collect(const std::string& prefix, ParamList& out) const {
  ln_attn.collect(prefix + ".ln_attn", out);
  qkv.collect(prefix + ".qkv", out);
  attn_out.collect(prefix + ".attn_out", out);
  ln_mlp.collect(prefix + ".ln_mlp", out);
  mlp_up.collect(prefix + ".mlp_up", out);
  mlp_down.collect(prefix + ".mlp_down", out);
  out.add(prefix + ".pos", pos);
}

namespace {

void check_window(const Tensor& x, const VitBlockParams& p) {
  if (x.rank() != 2 || x.dim(0) != p.window_tokens() || x.dim(1) != p.pos.dim(1)) {
    throw ShapeError("window attention expects [" + std::to_string(p.window_tokens()) + " x " +
                     std::to_string(p.pos.dim(1)) + "] tokens, got " + to_string(x.shape()));
  }
}

struct HeadInputs {
  Tensor q;
  Tensor k;
  Tensor v;
};

HeadInputs head_inputs(const Tensor& qkv, std::size_t c, std::size_t dh, std::size_t h) {
  return HeadInputs{slice_cols(qkv, h * dh, dh), slice_cols(qkv, c + h * dh, dh), slice_cols(qkv, 2 * c + h * dh, dh)};
}

Tensor scores(const HeadInputs& in, std::size_t dh) {
  return softmax_lastdim(scale(matmul(in.q, transpose(in.k)), 1.0 / std::sqrt(static_cast<double>(dh))));
}

}  // namespace

Tensor attention_weights(const Tensor& x, const VitBlockParams& p, std::size_t head) {
  check_window(x, p);
  const std::size_t c = x.dim(1);
  const std::size_t dh = c / p.heads;
  const Tensor qkv = p.qkv(add(p.ln_attn(x), p.pos));
  return scores(head_inputs(qkv, c, dh, head), dh);
}

Tensor window_self_attention(const Tensor& x, const VitBlockParams& p) {
  check_window(x, p);
  const std::size_t c = x.dim(1);
  const std::size_t dh = c / p.heads;
  const Tensor qkv = p.qkv(add(p.ln_attn(x), p.pos));
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const HeadInputs in = head_inputs(qkv, c, dh, h);
    heads.push_back(matmul(scores(in, dh), in.v));
  }
  const Tensor merged = p.heads == 1 ? heads.front() : concat_cols(heads);
  return add(x, p.attn_out(merged));
}

Tensor vit_block(const Tensor& x, const VitBlockParams& p) {
  const Tensor a = window_self_attention(x, p);
  return add(a, p.mlp_down(gelu(p.mlp_up(p.ln_mlp(a)))));
}

}  // namespace mrt
