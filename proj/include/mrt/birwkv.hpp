// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mrt/nn.hpp"

namespace mrt {

/// Per-channel decay and current-token bonus of bidirectional WKV attention.
/// The decay is w = exp(w_raw) so it can never amplify with distance.
struct BiWkvParams {
  Tensor w_raw;  // [c]
  Tensor u;      // [c]

  static BiWkvParams init(std::size_t c);
  std::vector<double> decay() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Direct O(T^2 c) evaluation of
///   wkv_t = (sum_{i!=t} e^{-(|t-i|-1) w/T + k_i} v_i + e^{u+k_t} v_t)
///         / (sum_{i!=t} e^{-(|t-i|-1) w/T + k_i}     + e^{u+k_t})
/// with a per-(t, channel) max subtracted from every exponent. Not tracked.
Tensor bi_wkv_naive(const Tensor& k, const Tensor& v, const BiWkvParams& params);

/// Same value in O(T c): a forward and a backward prefix scan of
/// (numerator, denominator) pairs with running-max renormalization, plus
/// the self term. Differentiable in k, v, w_raw and u.
Tensor bi_wkv_scan(const Tensor& k, const Tensor& v, const BiWkvParams& params);

struct BiWkvGrads {
  std::vector<double> k;      // [T x c]
  std::vector<double> v;      // [T x c]
  std::vector<double> w_raw;  // [c]
  std::vector<double> u;      // [c]
};

/// Analytic gradients of the scan output against `grad_out`, also in O(T c).
BiWkvGrads bi_wkv_backward(const Tensor& k, const Tensor& v, const BiWkvParams& params,
                           std::span<const double> grad_out);

struct SpatialMixParams {
  LayerNormParams ln;
  Linear receptance;
  Linear key;
  Linear value;
  Linear output;
  BiWkvParams wkv;

  static SpatialMixParams init(std::size_t c, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ChannelMixParams {
  LayerNormParams ln;
  Linear receptance;  // c -> c
  Linear key;         // c -> r*c
  Linear down;        // r*c -> c

  static ChannelMixParams init(std::size_t c, std::size_t ratio, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BiRwkvBlockParams {
  SpatialMixParams spatial;
  ChannelMixParams channel;

  static BiRwkvBlockParams init(std::size_t c, std::size_t ratio, Rng& rng);
  /// Zeroes the spatial output projection and the channel down projection,
  /// which turns the block into the identity.
  void zero_output_projections();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Output(sigmoid(R) * BiWKV(K, V)) of the layer-normalized input. No residual.
Tensor spatial_mix(const Tensor& x, const SpatialMixParams& p);
/// sigmoid(R) * Down(squared_relu(K)) of the layer-normalized input. No residual.
Tensor channel_mix(const Tensor& x, const ChannelMixParams& p);
/// x + spatial_mix(x), then + channel_mix of that. Works for any length T.
Tensor bi_rwkv_block(const Tensor& x, const BiRwkvBlockParams& p);

}  // namespace mrt
