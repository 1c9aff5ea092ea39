// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mrt/nn.hpp"

namespace mrt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One AdamW update with decoupled weight decay. `state` is zero-initialized
/// on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg);

class AdamW {
 public:
  AdamW(ParamList params, AdamConfig cfg);

  void step();
  void zero_grad() const { params_.zero_grad(); }
  const ParamList& params() const { return params_; }
  AdamConfig& config() { return cfg_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<AdamState> states_;
};

}  // namespace mrt
