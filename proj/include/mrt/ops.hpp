// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrt/tensor.hpp"

namespace mrt {

// Differentiable primitives. Two-dimensional ops treat a tensor as
// rows() x cols(); "row" ops broadcast a [c] vector over leading dims and
// nothing else broadcasts.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor detach(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor mul_row(const Tensor& x, const Tensor& row);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sigmoid(const Tensor& x);
Tensor squared_relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor normal_cdf(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column means over all rows: [rows x c] -> [c].
Tensor mean_rows(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// out[i] = x[index[i]]; backward scatter-adds, so repeated indices share
/// gradient.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

/// [C x H x W] -> [(H/p * W/p) x (C*p*p)], patches in raster order, each
/// patch flattened channel-major then row then column.
Tensor patchify(const Tensor& image, std::size_t p);
/// Inverse of patchify for a target [channels x height x width] image.
Tensor unpatchify(const Tensor& tokens, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t p);

/// Rounds half away from zero; backward is the identity.
Tensor round_ste(const Tensor& x);
/// 2*[x >= 0] - 1; backward is the identity.
Tensor sign_ste(const Tensor& x);
/// Keeps x where mask != 0 and writes +0.0 elsewhere; gradient is masked.
Tensor mask_select(const Tensor& x, std::span<const std::uint8_t> mask);

/// Mean cross-entropy (natural log) of logits [n x k] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

double round_half_away(double v);

}  // namespace mrt
