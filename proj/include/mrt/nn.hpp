// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mrt/ops.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

using Rng = std::mt19937_64;

/// Named parameter handles. Entries share storage with the owning module.
class ParamList {
 public:
  void add(const std::string& name, const Tensor& t) { entries_.emplace_back(name, t); }
  void append(const ParamList& other);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

Tensor randn(Shape shape, double stddev, Rng& rng, bool trainable = true);
Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool trainable = false);
Tensor zeros_param(Shape shape);
Tensor full_param(Shape shape, double value);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void zero();
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams init(std::size_t c);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Linear -> GELU -> Linear, hidden width max(in, out).
struct Mlp {
  Linear up;
  Linear down;

  static Mlp init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace mrt
