// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mrt {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() == 0) return 1;
  return size() / impl_->shape.back();
}

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : impl_->shape.back(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t(shape(), impl_->data);
  t.set_requires_grad(requires_grad());
  return t;
}

namespace {
thread_local Tape* current_tape = nullptr;
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;
  loss.impl()->accumulate(0, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace detail {

bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite value in result");
  }
}

Tensor finish(Tensor out, bool track, Tape::Backward backward, const char* op) {
  check_finite(out, op);
  if (track) {
    out.set_requires_grad(true);
    current_tape->record(std::move(backward));
  }
  return out;
}

}  // namespace detail

}  // namespace mrt
