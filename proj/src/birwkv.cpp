// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/birwkv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mrt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_wkv_inputs(const Tensor& k, const Tensor& v, const BiWkvParams& params) {
  if (k.rank() != 2 || k.shape() != v.shape()) {
    throw ShapeError("bi_wkv: k " + to_string(k.shape()) + " and v " + to_string(v.shape()) +
                     " must be matching [T x c]");
  }
  if (k.dim(0) == 0) throw ShapeError("bi_wkv: empty sequence");
  if (params.w_raw.size() != k.dim(1) || params.u.size() != k.dim(1)) {
    throw ShapeError("bi_wkv: decay/bonus width does not match channel count");
  }
}

// Running sum of terms value * e^{exp}, stored as (num, den) * e^{scale}.
// `dnum`/`dden` carry the same sums weighted by each term's distance from the
// current position minus one, which the decay gradient needs.
struct DirectionalSum {
  double num = 0.0;
  double den = 0.0;
  double dnum = 0.0;
  double dden = 0.0;
  double scale = kNegInf;

  // Moves one step along the sequence and absorbs the token just passed.
  void advance(double lambda, double key, double value) {
    const double decayed = scale - lambda;
    const double next = std::max(decayed, key);
    const double keep = std::exp(decayed - next);
    const double fresh = std::exp(key - next);
    dnum = (dnum + num) * keep;
    dden = (dden + den) * keep;
    num = num * keep + value * fresh;
    den = den * keep + fresh;
    scale = next;
  }
};

// Running sum of signed terms g * e^{exp} under plain distance decay.
struct DecaySum {
  double val = 0.0;
  double val_out = 0.0;
  double scale = kNegInf;

  void advance(double lambda, double g_scaled, double g_exp, double out) {
    const double decayed = scale - lambda;
    const double next = std::max(decayed, g_exp);
    const double keep = std::exp(decayed - next);
    const double fresh = std::exp(g_exp - next);
    val = val * keep + g_scaled * fresh;
    val_out = val_out * keep + g_scaled * out * fresh;
    scale = next;
  }
};

struct ScanResult {
  std::vector<double> out;
  std::vector<double> den_scaled;  // denominator / e^{max_exp}
  std::vector<double> max_exp;
  std::vector<DirectionalSum> fwd;  // state before absorbing token t (i < t)
  std::vector<DirectionalSum> bwd;  // state before absorbing token t (i > t)
};

ScanResult run_scan(const Tensor& k, const Tensor& v, const std::vector<double>& w, std::span<const double> u,
                    bool keep_states) {
  const std::size_t T = k.dim(0);
  const std::size_t c = k.dim(1);
  const auto kd = k.data();
  const auto vd = v.data();
  ScanResult r;
  r.out.assign(T * c, 0.0);
  r.den_scaled.assign(T * c, 0.0);
  r.max_exp.assign(T * c, 0.0);
  std::vector<DirectionalSum> fwd(T * c);
  std::vector<DirectionalSum> bwd(T * c);
  std::vector<double> lambda(c);
  for (std::size_t d = 0; d < c; ++d) lambda[d] = w[d] / static_cast<double>(T);

  std::vector<DirectionalSum> state(c);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < c; ++d) {
      fwd[t * c + d] = state[d];
      state[d].advance(lambda[d], kd[t * c + d], vd[t * c + d]);
    }
  }
  std::fill(state.begin(), state.end(), DirectionalSum{});
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t d = 0; d < c; ++d) {
      bwd[t * c + d] = state[d];
      state[d].advance(lambda[d], kd[t * c + d], vd[t * c + d]);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < c; ++d) {
      const std::size_t i = t * c + d;
      const DirectionalSum& f = fwd[i];
      const DirectionalSum& b = bwd[i];
      const double self = u[d] + kd[i];
      const double m = std::max({f.scale, b.scale, self});
      const double ef = std::exp(f.scale - m);
      const double eb = std::exp(b.scale - m);
      const double es = std::exp(self - m);
      const double num = f.num * ef + b.num * eb + vd[i] * es;
      const double den = f.den * ef + b.den * eb + es;
      r.out[i] = num / den;
      r.den_scaled[i] = den;
      r.max_exp[i] = m;
    }
  }
  if (keep_states) {
    r.fwd = std::move(fwd);
    r.bwd = std::move(bwd);
  }
  return r;
}

}  // namespace

BiWkvParams BiWkvParams::init(std::size_t c) {
  std::vector<double> w(c);
  for (std::size_t d = 0; d < c; ++d) {
    w[d] = -1.0 + 4.0 * static_cast<double>(d) / static_cast<double>(std::max<std::size_t>(c - 1, 1));
  }
  return BiWkvParams{Tensor::parameter({c}, std::move(w)), zeros_param({c})};
}

std::vector<double> BiWkvParams::decay() const {
  std::vector<double> w(w_raw.size());
  for (std::size_t d = 0; d < w.size(); ++d) w[d] = std::exp(w_raw[d]);
  return w;
}

void BiWkvParams::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".w_raw", w_raw);
  out.add(prefix + ".u", u);
}

Tensor bi_wkv_naive(const Tensor& k, const Tensor& v, const BiWkvParams& params) {
  check_wkv_inputs(k, v, params);
  const std::size_t T = k.dim(0);
  const std::size_t c = k.dim(1);
  const std::vector<double> w = params.decay();
  Tensor out(k.shape());
  auto od = out.mutable_data();
  std::vector<double> expo(T);
  for (std::size_t d = 0; d < c; ++d) {
    const double lambda = w[d] / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < T; ++i) {
        const double dist = static_cast<double>(t > i ? t - i : i - t);
        expo[i] = i == t ? params.u[d] + k[t * c + d] : -(dist - 1.0) * lambda + k[i * c + d];
      }
      const double m = *std::max_element(expo.begin(), expo.end());
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < T; ++i) {
        const double e = std::exp(expo[i] - m);
        num += e * v[i * c + d];
        den += e;
      }
      od[t * c + d] = num / den;
    }
  }
  detail::check_finite(out, "bi_wkv_naive");
  return out;
}

BiWkvGrads bi_wkv_backward(const Tensor& k, const Tensor& v, const BiWkvParams& params,
                           std::span<const double> grad_out) {
  check_wkv_inputs(k, v, params);
  const std::size_t T = k.dim(0);
  const std::size_t c = k.dim(1);
  if (grad_out.size() != T * c) throw ShapeError("bi_wkv_backward: gradient size mismatch");
  const std::vector<double> w = params.decay();
  const auto kd = k.data();
  const auto vd = v.data();
  const auto ud = params.u.data();
  const ScanResult s = run_scan(k, v, w, ud, true);

  BiWkvGrads g;
  g.k.assign(T * c, 0.0);
  g.v.assign(T * c, 0.0);
  g.w_raw.assign(c, 0.0);
  g.u.assign(c, 0.0);
  std::vector<double> lambda(c);
  for (std::size_t d = 0; d < c; ++d) lambda[d] = w[d] / static_cast<double>(T);

  // d(out_t)/d(num_t) = 1/den_t; with den_t = den_scaled_t e^{m_t} the scaled
  // upstream is gs_t = g_t / den_scaled_t at exponent -m_t.
  std::vector<double> gs(T * c);
  for (std::size_t i = 0; i < T * c; ++i) gs[i] = grad_out[i] / s.den_scaled[i];

  std::vector<double> grad_lambda(c, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < c; ++d) {
      const std::size_t i = t * c + d;
      const double out = s.out[i];
      const double self_w = std::exp(ud[d] + kd[i] - s.max_exp[i]);
      const double gself = gs[i] * self_w;
      g.u[d] += gself * (vd[i] - out);
      g.k[i] += gself * (vd[i] - out);
      g.v[i] += gself;
      const DirectionalSum& f = s.fwd[i];
      const DirectionalSum& b = s.bwd[i];
      const double ef = std::exp(f.scale - s.max_exp[i]);
      const double eb = std::exp(b.scale - s.max_exp[i]);
      const double dnum = f.dnum * ef + b.dnum * eb;
      const double dden = f.dden * ef + b.dden * eb;
      grad_lambda[d] -= gs[i] * (dnum - out * dden);
    }
  }

  // Key/value gradients through the off-diagonal weights:
  //   dk_j += e^{k_j} (v_j P_j - Q_j),  dv_j += e^{k_j} P_j
  // with P_j = sum_{t!=j} e^{-(|t-j|-1) lambda} gn_t and Q_j the same sum
  // weighted by out_t. Both directions are prefix scans.
  auto accumulate_direction = [&](bool forward) {
    std::vector<DecaySum> state(c);
    for (std::size_t step = 0; step < T; ++step) {
      const std::size_t j = forward ? step : T - 1 - step;
      for (std::size_t d = 0; d < c; ++d) {
        const std::size_t i = j * c + d;
        const DecaySum& st = state[d];
        if (st.scale != kNegInf) {
          const double e = std::exp(st.scale + kd[i]);
          g.k[i] += e * (vd[i] * st.val - st.val_out);
          g.v[i] += e * st.val;
        }
        state[d].advance(lambda[d], gs[i], -s.max_exp[i], s.out[i]);
      }
    }
  };
  accumulate_direction(true);
  accumulate_direction(false);

  // lambda = exp(w_raw) / T
  for (std::size_t d = 0; d < c; ++d) g.w_raw[d] = grad_lambda[d] * lambda[d];
  return g;
}

Tensor bi_wkv_scan(const Tensor& k, const Tensor& v, const BiWkvParams& params) {
  check_wkv_inputs(k, v, params);
  ScanResult s = run_scan(k, v, params.decay(), params.u.data(), false);
  Tensor out(k.shape(), std::move(s.out));
  const bool track = detail::should_track({&k, &v, &params.w_raw, &params.u});
  return detail::finish(out, track, [k, v, params, oi = out.impl()] {
    if (oi->grad.empty()) return;
    const BiWkvGrads g = bi_wkv_backward(k, v, params, oi->grad);
    auto push = [](const Tensor& t, const std::vector<double>& grad) {
      if (!t.requires_grad()) return;
      double* dst = t.impl()->grad_buffer();
      for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
    };
    push(k, g.k);
    push(v, g.v);
    push(params.w_raw, g.w_raw);
    push(params.u, g.u);
  }, "bi_wkv_scan");
}

SpatialMixParams SpatialMixParams::init(std::size_t c, Rng& rng) {
  SpatialMixParams p{LayerNormParams::init(c), Linear::init(c, c, rng), Linear::init(c, c, rng),
                     Linear::init(c, c, rng), Linear::init(c, c, rng), BiWkvParams::init(c)};
  return p;
}

void SpatialMixParams::collect(const std::string& prefix, ParamList& out) const {
  ln.collect(prefix + ".ln", out);
  receptance.collect(prefix + ".receptance", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
  wkv.collect(prefix + ".wkv", out);
}

ChannelMixParams ChannelMixParams::init(std::size_t c, std::size_t ratio, Rng& rng) {
  ChannelMixParams p{LayerNormParams::init(c), Linear::init(c, c, rng), Linear::init(c, ratio * c, rng),
                     Linear::init(ratio * c, c, rng)};
  return p;
}

void ChannelMixParams::collect(const std::string& prefix, ParamList& out) const {
  ln.collect(prefix + ".ln", out);
  receptance.collect(prefix + ".receptance", out);
  key.collect(prefix + ".key", out);
  down.collect(prefix + ".down", out);
}

BiRwkvBlockParams BiRwkvBlockParams::init(std::size_t c, std::size_t ratio, Rng& rng) {
  SpatialMixParams s = SpatialMixParams::init(c, rng);
  ChannelMixParams m = ChannelMixParams::init(c, ratio, rng);
  return BiRwkvBlockParams{std::move(s), std::move(m)};
}

void BiRwkvBlockParams::zero_output_projections() {
  spatial.output.zero();
  channel.down.zero();
}

void BiRwkvBlockParams::collect(const std::string& prefix, ParamList& out) const {
  spatial.collect(prefix + ".spatial", out);
  channel.collect(prefix + ".channel", out);
}

Tensor spatial_mix(const Tensor& x, const SpatialMixParams& p) {
  const Tensor h = p.ln(x);
  const Tensor r = p.receptance(h);
  const Tensor k = p.key(h);
  const Tensor v = p.value(h);
  return p.output(mul(sigmoid(r), bi_wkv_scan(k, v, p.wkv)));
}

Tensor channel_mix(const Tensor& x, const ChannelMixParams& p) {
  const Tensor h = p.ln(x);
  return mul(sigmoid(p.receptance(h)), p.down(squared_relu(p.key(h))));
}

Tensor bi_rwkv_block(const Tensor& x, const BiRwkvBlockParams& p) {
  const Tensor a = add(x, spatial_mix(x, p.spatial));
  return add(a, channel_mix(a, p.channel));
}

}  // namespace mrt
