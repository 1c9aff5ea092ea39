// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/optim.hpp"

#include <cmath>

namespace mrt {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

AdamW::AdamW(ParamList params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), states_(params_.size()) {}

void AdamW::step() {
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_.entries()[i].second;
    if (p.has_grad()) {
      const auto g = p.impl()->grad;
      adam_step(p.mutable_data(), g, states_[i], cfg_);
    } else {
      zeros.assign(p.size(), 0.0);
      adam_step(p.mutable_data(), zeros, states_[i], cfg_);
    }
  }
}

}  // namespace mrt
