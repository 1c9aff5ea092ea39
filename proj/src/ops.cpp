// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace mrt {

namespace {

using Impl = std::shared_ptr<TensorImpl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Elementwise unary op with derivative expressed through input and output.
template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  Tensor out(x.shape());
  auto od = out.mutable_data();
  auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(xd[i]);
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), df] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    for (std::size_t i = 0; i < oi->data.size(); ++i) g[i] += oi->grad[i] * df(xi->data[i], oi->data[i]);
  }, name);
}

}  // namespace

double round_half_away(double v) { return std::round(v); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.cols() != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.rows());
  const auto k = static_cast<Eigen::Index>(a.cols());
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Shape shape = a.shape();
  shape.back() = static_cast<std::size_t>(n);
  Tensor out(shape);
  Map(out.mutable_data().data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  const bool track = detail::should_track({&a, &b});
  return detail::finish(out, track, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
    if (oi->grad.empty()) return;
    MapC g(oi->grad.data(), m, n);
    if (ai->requires_grad) Map(ai->grad_buffer(), m, k).noalias() += g * MapC(bi->data.data(), k, n).transpose();
    if (bi->requires_grad) Map(bi->grad_buffer(), k, n).noalias() += MapC(ai->data.data(), m, k).transpose() * g;
  }, "matmul");
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expects rank 2, got " + to_string(a.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto n = static_cast<Eigen::Index>(a.dim(1));
  Tensor out(Shape{a.dim(1), a.dim(0)});
  Map(out.mutable_data().data(), n, m) = MapC(a.data().data(), m, n).transpose();
  const bool track = detail::should_track({&a});
  return detail::finish(out, track, [ai = a.impl(), oi = out.impl(), m, n] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    Map(ai->grad_buffer(), m, n) += MapC(oi->grad.data(), n, m).transpose();
  }, "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  const bool track = detail::should_track({&a});
  return detail::finish(out, track, [ai = a.impl(), oi = out.impl()] {
    if (oi->grad.empty() || !ai->requires_grad) return;
    double* g = ai->grad_buffer();
    for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i];
  }, "reshape");
}

Tensor detach(const Tensor& a) {
  return Tensor(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = a[i] + b[i];
  const bool track = detail::should_track({&a, &b});
  return detail::finish(out, track, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    for (const Impl& in : {ai, bi}) {
      if (!in->requires_grad) continue;
      double* g = in->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = a[i] - b[i];
  const bool track = detail::should_track({&a, &b});
  return detail::finish(out, track, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    if (ai->requires_grad) {
      double* g = ai->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      double* g = bi->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] -= oi->grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = a[i] * b[i];
  const bool track = detail::should_track({&a, &b});
  return detail::finish(out, track, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    if (ai->requires_grad) {
      double* g = ai->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      double* g = bi->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i] * ai->data[i];
    }
  }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = a[i] / b[i];
  const bool track = detail::should_track({&a, &b});
  return detail::finish(out, track, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    if (oi->grad.empty()) return;
    if (ai->requires_grad) {
      double* g = ai->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i] / bi->data[i];
    }
    if (bi->requires_grad) {
      double* g = bi->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] -= oi->grad[i] * oi->data[i] / bi->data[i];
    }
  }, "div");
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  if (row.size() != x.cols()) {
    throw ShapeError("add_row: row " + to_string(row.shape()) + " vs " + to_string(x.shape()));
  }
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  Tensor out(x.shape());
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) od[r * c + j] = x[r * c + j] + row[j];
  const bool track = detail::should_track({&x, &row});
  return detail::finish(out, track, [xi = x.impl(), ri = row.impl(), oi = out.impl(), n, c] {
    if (oi->grad.empty()) return;
    if (xi->requires_grad) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < n * c; ++i) g[i] += oi->grad[i];
    }
    if (ri->requires_grad) {
      double* g = ri->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += oi->grad[r * c + j];
    }
  }, "add_row");
}

Tensor mul_row(const Tensor& x, const Tensor& row) {
  if (row.size() != x.cols()) {
    throw ShapeError("mul_row: row " + to_string(row.shape()) + " vs " + to_string(x.shape()));
  }
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  Tensor out(x.shape());
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) od[r * c + j] = x[r * c + j] * row[j];
  const bool track = detail::should_track({&x, &row});
  return detail::finish(out, track, [xi = x.impl(), ri = row.impl(), oi = out.impl(), n, c] {
    if (oi->grad.empty()) return;
    if (xi->requires_grad) {
      double* g = xi->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += oi->grad[r * c + j] * ri->data[j];
    }
    if (ri->requires_grad) {
      double* g = ri->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += oi->grad[r * c + j] * xi->data[r * c + j];
    }
  }, "mul_row");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = x.cols();
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: affine params do not match " + to_string(x.shape()));
  }
  const std::size_t n = x.rows();
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(n * c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data().data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      od[r * c + j] = h * gamma[j] + beta[j];
    }
  }
  const bool track = detail::should_track({&x, &gamma, &beta});
  return detail::finish(out, track, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat,
                                     inv_std, n, c] {
    if (oi->grad.empty()) return;
    const auto& g = oi->grad;
    if (gi->requires_grad || bi->requires_grad) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          if (gi->requires_grad) gi->accumulate(j, g[r * c + j] * (*xhat)[r * c + j]);
          if (bi->requires_grad) bi->accumulate(j, g[r * c + j]);
        }
      }
    }
    if (!xi->requires_grad) return;
    double* gx = xi->grad_buffer();
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t r = 0; r < n; ++r) {
      double m1 = 0.0;
      double m2 = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double dh = g[r * c + j] * gi->data[j];
        m1 += dh;
        m2 += dh * (*xhat)[r * c + j];
      }
      m1 *= inv_c;
      m2 *= inv_c;
      for (std::size_t j = 0; j < c; ++j) {
        const double dh = g[r * c + j] * gi->data[j];
        gx[r * c + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * c + j] * m2);
      }
    }
  }, "layer_norm");
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor squared_relu(const Tensor& x) {
  return unary(
      x, "squared_relu", [](double v) { return v > 0 ? v * v : 0.0; },
      [](double v, double) { return v > 0 ? 2.0 * v : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * std::erfc(-v * kInvSqrt2); },
      [](double v, double) {
        return 0.5 * std::erfc(-v * kInvSqrt2) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  Tensor out(x.shape());
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      od[r * c + j] = std::exp(row[j] - mx);
      s += od[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) od[r * c + j] /= s;
  }
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), n, c] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* gx = xi->grad_buffer();
    const auto& y = oi->data;
    const auto& g = oi->grad;
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  }, "softmax_lastdim");
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus", [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor normal_cdf(const Tensor& x) {
  return unary(
      x, "normal_cdf", [](double v) { return 0.5 * std::erfc(-v * kInvSqrt2); },
      [](double v, double) { return kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      x, "clamp_min", [lo](double v) { return std::max(v, lo); },
      [lo](double v, double) { return v >= lo ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl()] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    for (std::size_t i = 0; i < xi->data.size(); ++i) g[i] += oi->grad[0];
  }, "sum");
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  if (n == 0) throw ShapeError("mean_rows of empty tensor");
  Tensor out(Shape{c});
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) od[j] += x[r * c + j];
  for (double& v : od) v /= static_cast<double>(n);
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), n, c] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += oi->grad[j] * inv;
  }, "mean_rows");
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t c = x.cols();
  if (start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                     to_string(x.shape()));
  }
  Tensor out(Shape{count, c},
             std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(start * c),
                                 x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * c)));
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), start, c] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer() + start * c;
    for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += oi->grad[i];
  }, "slice_rows");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch " + to_string(p.shape()));
    total += p.rows();
    track = track || detail::should_track({&p});
  }
  std::vector<double> data;
  data.reserve(total * c);
  std::vector<Impl> impls;
  for (const Tensor& p : parts) {
    data.insert(data.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  Tensor out(Shape{total, c}, std::move(data));
  return detail::finish(out, track, [impls, oi = out.impl()] {
    if (oi->grad.empty()) return;
    std::size_t off = 0;
    for (const Impl& p : impls) {
      if (p->requires_grad) {
        double* g = p->grad_buffer();
        for (std::size_t i = 0; i < p->data.size(); ++i) g[i] += oi->grad[off + i];
      }
      off += p->data.size();
    }
  }, "concat_rows");
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  if (start + count > c) throw ShapeError("slice_cols: range out of " + to_string(x.shape()));
  Tensor out(Shape{n, count});
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < count; ++j) od[r * count + j] = x[r * c + start + j];
  const bool track = detail::should_track({&x});
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), n, c, start, count] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < count; ++j) g[r * c + start + j] += oi->grad[r * count + j];
  }, "slice_cols");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch " + to_string(p.shape()));
    total += p.cols();
    track = track || detail::should_track({&p});
  }
  Tensor out(Shape{n, total});
  auto od = out.mutable_data();
  std::vector<Impl> impls;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) od[r * total + off + j] = p[r * c + j];
    off += c;
    impls.push_back(p.impl());
  }
  return detail::finish(out, track, [impls, oi = out.impl(), n, total] {
    if (oi->grad.empty()) return;
    std::size_t off = 0;
    for (const Impl& p : impls) {
      const std::size_t c = p->shape.empty() ? 1 : p->shape.back();
      if (p->requires_grad) {
        double* g = p->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += oi->grad[r * total + off + j];
      }
      off += c;
    }
  }, "concat_cols");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  Tensor out(Shape{index.size(), c});
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.data().data() + index[i] * c, c, od.data() + i * c);
  }
  const bool track = detail::should_track({&x});
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), idx = std::move(idx), c] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += oi->grad[i * c + j];
  }, "gather_rows");
}

namespace {

// Maps each element of the [C x H x W] image to its slot in patch-token
// layout; patchify and unpatchify are the two directions of this permutation.
std::vector<std::size_t> patch_permutation(std::size_t channels, std::size_t height, std::size_t width,
                                           std::size_t p) {
  const std::size_t gw = width / p;
  const std::size_t patch_len = channels * p * p;
  std::vector<std::size_t> perm(channels * height * width);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t token = (y / p) * gw + (x / p);
        const std::size_t within = ch * p * p + (y % p) * p + (x % p);
        perm[(ch * height + y) * width + x] = token * patch_len + within;
      }
    }
  }
  return perm;
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3 || p == 0 || image.dim(1) % p != 0 || image.dim(2) % p != 0) {
    throw ShapeError("patchify: image " + to_string(image.shape()) + " not divisible by " + std::to_string(p));
  }
  const std::size_t ch = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  auto perm = std::make_shared<std::vector<std::size_t>>(patch_permutation(ch, h, w, p));
  Tensor out(Shape{(h / p) * (w / p), ch * p * p});
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < perm->size(); ++i) od[(*perm)[i]] = image[i];
  const bool track = detail::should_track({&image});
  return detail::finish(out, track, [ii = image.impl(), oi = out.impl(), perm] {
    if (oi->grad.empty() || !ii->requires_grad) return;
    double* g = ii->grad_buffer();
    for (std::size_t i = 0; i < perm->size(); ++i) g[i] += oi->grad[(*perm)[i]];
  }, "patchify");
}

Tensor unpatchify(const Tensor& tokens, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t p) {
  if (p == 0 || height % p != 0 || width % p != 0 || tokens.rows() != (height / p) * (width / p) ||
      tokens.cols() != channels * p * p) {
    throw ShapeError("unpatchify: tokens " + to_string(tokens.shape()) + " do not tile " +
                     std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  auto perm = std::make_shared<std::vector<std::size_t>>(patch_permutation(channels, height, width, p));
  Tensor out(Shape{channels, height, width});
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < perm->size(); ++i) od[i] = tokens[(*perm)[i]];
  const bool track = detail::should_track({&tokens});
  return detail::finish(out, track, [ti = tokens.impl(), oi = out.impl(), perm] {
    if (oi->grad.empty() || !ti->requires_grad) return;
    double* g = ti->grad_buffer();
    for (std::size_t i = 0; i < perm->size(); ++i) g[(*perm)[i]] += oi->grad[i];
  }, "unpatchify");
}

Tensor round_ste(const Tensor& x) {
  return unary(x, "round_ste", [](double v) { return round_half_away(v); }, [](double, double) { return 1.0; });
}

Tensor sign_ste(const Tensor& x) {
  return unary(x, "sign_ste", [](double v) { return v >= 0.0 ? 1.0 : -1.0; }, [](double, double) { return 1.0; });
}

Tensor mask_select(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.size()) throw ShapeError("mask_select: mask size mismatch");
  Tensor out(x.shape());
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = mask[i] ? x[i] : 0.0;
  const bool track = detail::should_track({&x});
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::finish(out, track, [xi = x.impl(), oi = out.impl(), m = std::move(m)] {
    if (oi->grad.empty() || !xi->requires_grad) return;
    double* g = xi->grad_buffer();
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) g[i] += oi->grad[i];
  }, "mask_select");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (targets.size() != n) throw ShapeError("cross_entropy: target count mismatch");
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) throw ShapeError("cross_entropy: target class out of range");
    const double* row = logits.data().data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[targets[r]];
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - lse);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  const bool track = detail::should_track({&logits});
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return detail::finish(out, track, [li = logits.impl(), oi = out.impl(), probs, tg = std::move(tg), n, k] {
    if (oi->grad.empty() || !li->requires_grad) return;
    double* g = li->grad_buffer();
    const double s = oi->grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += s * (*probs)[r * k + j];
      g[r * k + tg[r]] -= s;
    }
  }, "cross_entropy");
}

}  // namespace mrt
