// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "mrt/local_vit.hpp"
#include "mrt/ops.hpp"
#include "support/gradcheck.hpp"

using namespace mrt;
using mrt::testing::grad_check;
using mrt::testing::project;
using mrt::testing::random_tensor;

TEST_CASE("attention weights are row-stochastic") {
  Rng rng(1);
  const VitBlockParams p = VitBlockParams::init(8, 2, 4, 10, rng);
  const Tensor x = random_tensor({10, 8}, rng);
  for (std::size_t h = 0; h < 2; ++h) {
    const Tensor a = attention_weights(x, p, h);
    REQUIRE(a.shape() == Shape{10, 10});
    for (std::size_t i = 0; i < 10; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 10; ++j) {
        CHECK(a[i * 10 + j] >= 0.0);
        s += a[i * 10 + j];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("zeroed output projections make the block an identity") {
  Rng rng(2);
  VitBlockParams p = VitBlockParams::init(8, 2, 4, 6, rng);
  p.zero_output_projections();
  const Tensor x = random_tensor({6, 8}, rng);
  const Tensor y = vit_block(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("window size mismatch is a shape error") {
  Rng rng(3);
  const VitBlockParams p = VitBlockParams::init(8, 2, 4, 6, rng);
  CHECK_THROWS_AS(vit_block(random_tensor({5, 8}, rng), p), ShapeError);
  CHECK_THROWS_AS(VitBlockParams::init(9, 2, 4, 6, rng), ShapeError);
}

TEST_CASE("without positions the block is permutation equivariant") {
  Rng rng(4);
  VitBlockParams p = VitBlockParams::init(8, 2, 2, 7, rng);
  for (double& v : p.pos.mutable_data()) v = 0.0;
  const Tensor x = random_tensor({7, 8}, rng);
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
  const Tensor y_perm = vit_block(gather_rows(x, perm), p);
  const Tensor perm_y = gather_rows(vit_block(x, p), perm);
  for (std::size_t i = 0; i < y_perm.size(); ++i) CHECK(y_perm[i] == doctest::Approx(perm_y[i]).epsilon(1e-12));
}

TEST_CASE("position table breaks permutation symmetry") {
  Rng rng(5);
  VitBlockParams p = VitBlockParams::init(8, 2, 2, 4, rng);
  p.pos = random_tensor({4, 8}, rng);
  // Identical rows: only the position table can tell the slots apart.
  const Tensor row = random_tensor({1, 8}, rng);
  const Tensor x = gather_rows(row, std::vector<std::size_t>{0, 0, 0, 0});
  const Tensor y = vit_block(x, p);
  double spread = 0.0;
  for (std::size_t ch = 0; ch < 8; ++ch) spread += std::fabs(y[ch] - y[8 + ch]);
  CHECK(spread > 1e-6);
}

TEST_CASE("vit block gradients match finite differences") {
  Rng rng(6);
  VitBlockParams p = VitBlockParams::init(4, 2, 2, 5, rng);
  Tensor x = random_tensor({5, 4}, rng);
  ParamList params;
  p.collect("vit", params);
  mrt::testing::jitter(params, rng);
  std::vector<std::pair<std::string, Tensor>> inputs = {{"x", x}};
  for (const auto& e : params.entries()) inputs.push_back(e);
  const auto r = grad_check([&] { return project(vit_block(x, p)); }, inputs);
  CAPTURE(r.worst);
  CHECK(r.max_rel_err < 1e-5);
}
