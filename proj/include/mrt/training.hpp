// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mrt/config.hpp"
#include "mrt/model.hpp"
#include "mrt/optim.hpp"

namespace mrt {

struct LossWeights {
  double ent = 0.25;
  double commit = 0.00625;
  double adv = 0.05;
  double lambda = 20.0;  // stage-2 rate weight
};

/// Mean squared error between reconstructed and encoder latents.
Tensor latent_alignment_loss(const Tensor& latents_hat, const Tensor& latents);

/// Mean per-sample entropy minus the entropy of the batch-mean code, in
/// bits. Each dimension is a Bernoulli with p = sigmoid(2 z). Rows are
/// samples.
Tensor lfq_entropy_loss(const Tensor& z);
/// Mean over rows of the squared distance between z and its quantized value
/// `z_q`, which is treated as a constant.
Tensor lfq_commitment_loss(const Tensor& z, const Tensor& z_q);
Tensor lfq_loss(const Tensor& z, const LossWeights& w);

/// Stand-in for a pretrained image tokenizer: every target_block^2 pixel
/// block is assigned the nearest of `codebook` fixed random patterns.
class SyntheticTargetProvider {
 public:
  SyntheticTargetProvider(std::size_t codebook, std::size_t block, std::uint64_t seed);

  /// Code grid of (H / block) x (W / block) ids in raster order.
  std::vector<std::size_t> codes(const Tensor& image) const;
  std::size_t codebook() const { return codebook_; }
  std::size_t block() const { return block_; }

 private:
  std::size_t codebook_;
  std::size_t block_;
  std::vector<double> centroids_;  // [codebook x 3*block*block]
};

/// Reorders a target grid to match the auxiliary head's logit rows: for each
/// raster patch token, its sub-blocks in raster order.
std::vector<std::size_t> targets_for_tokens(std::span<const std::size_t> grid, std::size_t height, std::size_t width,
                                            const ModelConfig& cfg);

/// Piecewise-smooth random test image in [0, 1]: gradients, discs,
/// rectangles and a little noise.
Tensor synthetic_image(std::size_t height, std::size_t width, Rng& rng);
std::vector<Tensor> synthetic_batch(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed);
/// All .ppm files of a directory in file-name order.
std::vector<Tensor> load_corpus(const std::string& dir);

/// Fixed, randomly initialized three-layer strided-convolution feature
/// extractor used as the perceptual distance.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed);
  std::vector<Tensor> features(const Tensor& image) const;

 private:
  std::array<Linear, 3> layers_;
};

/// Sum over layers of the mean squared feature difference.
Tensor perceptual_loss(const Tensor& x_hat, const Tensor& x, const FeatureExtractor& fe);

/// Per-patch real/fake logits: an 8x8 stride-8 convolution, GELU and a
/// linear read-out.
struct PatchDiscriminator {
  Linear embed;
  Linear head;

  static PatchDiscriminator init(Rng& rng);
  Tensor logits(const Tensor& image) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Non-saturating losses.
Tensor discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits);
Tensor generator_adversarial_loss(const Tensor& fake_logits);

struct Stage1Loss {
  Tensor total;
  Tensor ce;
  Tensor ent;
  Tensor commit;
  Tensor rate;    // bits per latent token, latent + hyper
  Tensor latent;  // alignment MSE
};

/// CE + lambda_ent * L_ent + lambda_commit * L_commit + rate + MSE for a batch.
/// CE, rate and MSE are averaged over images; the LFQ terms use every latent
/// token of the batch as one sample set. `noise` enables the additive-noise
/// rate proxy.
Stage1Loss stage1_loss(const MrtModel& model, const std::vector<Tensor>& images,
                       const std::vector<std::vector<std::size_t>>& token_targets, const LossWeights& w, Rng* noise);

struct Stage2Loss {
  Tensor total;
  Tensor l1;
  Tensor perceptual;
  Tensor adv;
  Tensor rate;  // bits per pixel
};

/// L1 + perceptual + lambda_adv * adversarial + lambda * rate for one image.
/// Without a discriminator the adversarial term is zero.
Stage2Loss stage2_loss(const Tensor& x, const Tensor& x_hat, const Tensor& rate_bits, const LossWeights& w,
                       const FeatureExtractor& fe, const PatchDiscriminator* disc);

struct TrainConfig {
  int stage = 1;
  std::size_t steps = 300;
  std::size_t batch = 4;
  std::size_t height = 256;
  std::size_t width = 256;
  std::uint64_t seed = 0;
  AdamConfig adam{3e-4, 0.9, 0.999, 1e-8, 1e-4};
  LossWeights weights;
  int lambda_index = 0;
  std::string init_checkpoint;
  std::string output_checkpoint;
  std::string data_dir;
  std::string log_path;
  std::size_t log_every = 10;

  /// Keys: stage, steps, batch, height, width, seed, lr, weight_decay,
  /// lambda_index, lambda, lambda_ent, lambda_commit, lambda_adv, init,
  /// output, data_dir, log, log_every.
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct Stage1Terms {
  double total, ce, ent, commit, rate, latent;
};

class Stage1Trainer {
 public:
  Stage1Trainer(MrtModel& model, const TrainConfig& cfg, std::vector<Tensor> images);
  Stage1Terms step();
  /// Loss terms on the batch without an update (rate on rounded values).
  Stage1Terms evaluate() const;

 private:
  MrtModel& model_;
  TrainConfig cfg_;
  std::vector<Tensor> images_;
  std::vector<std::vector<std::size_t>> targets_;
  AdamW opt_;
  Rng noise_;
};

struct Stage2Terms {
  double total, l1, perceptual, adv, rate, disc;
};

/// Fine-tunes RCM and decoder with the encoder frozen; the encoder latents
/// of the batch are computed once.
class Stage2Trainer {
 public:
  Stage2Trainer(MrtModel& model, const TrainConfig& cfg, std::vector<Tensor> images);
  Stage2Terms step();

 private:
  MrtModel& model_;
  TrainConfig cfg_;
  std::vector<Tensor> images_;
  std::vector<Tensor> latents_;
  FeatureExtractor fe_;
  PatchDiscriminator disc_;
  AdamW opt_;
  AdamW disc_opt_;
  Rng noise_;
};

}  // namespace mrt
