// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/nn.hpp"

#include <algorithm>

namespace mrt {

void ParamList::append(const ParamList& other) {
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParamList::zero_grad() const {
  for (const auto& [name, t] : entries_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

Tensor randn(Shape shape, double stddev, Rng& rng, bool trainable) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(trainable);
  return t;
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool trainable) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(trainable);
  return t;
}

Tensor zeros_param(Shape shape) { return full_param(std::move(shape), 0.0); }

Tensor full_param(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{randn({in, out}, 0.02, rng), zeros_param({out})};
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void Linear::zero() {
  std::ranges::fill(weight.mutable_data(), 0.0);
  std::ranges::fill(bias.mutable_data(), 0.0);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(std::size_t c) {
  return LayerNormParams{full_param({c}, 1.0), zeros_param({c})};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
}

Mlp Mlp::init(std::size_t in, std::size_t out, Rng& rng) {
  const std::size_t hidden = std::max(in, out);
  Linear up = Linear::init(in, hidden, rng);
  Linear down = Linear::init(hidden, out, rng);
  return Mlp{std::move(up), std::move(down)};
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

}  // namespace mrt
