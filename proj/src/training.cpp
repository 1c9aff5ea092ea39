// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "mrt/image_io.hpp"

namespace mrt {

namespace {

constexpr double kInvLn2 = 1.4426950408889634074;

// Bernoulli entropy in bits of p = sigmoid(a): softplus(a) - a * sigmoid(a).
Tensor bernoulli_entropy_from_logits(const Tensor& a) {
  return scale(sub(softplus(a), mul(a, sigmoid(a))), kInvLn2);
}

Tensor bernoulli_entropy(const Tensor& p) {
  constexpr double kTiny = 1e-12;
  const Tensor q = add_scalar(scale(p, -1.0), 1.0);
  const Tensor hp = mul(p, log(clamp_min(p, kTiny)));
  const Tensor hq = mul(q, log(clamp_min(q, kTiny)));
  return scale(add(hp, hq), -kInvLn2);
}

// [C x H x W] tensor -> [C x H/2 x W/2] through one kernel-2 stride-2 layer.
Tensor conv_stride2(const Tensor& x, const Linear& layer, bool activate) {
  const std::size_t h = x.dim(1) / 2;
  const std::size_t w = x.dim(2) / 2;
  Tensor tokens = layer(patchify(x, 2));
  if (activate) tokens = gelu(tokens);
  return reshape(transpose(tokens), {tokens.cols(), h, w});
}

Tensor fixed_weights(std::size_t in, std::size_t out, Rng& rng) {
  return randn({in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng, false);
}

}  // namespace

Tensor latent_alignment_loss(const Tensor& latents_hat, const Tensor& latents) {
  if (latents_hat.shape() != latents.shape()) {
    throw ShapeError("latent_alignment_loss: " + to_string(latents_hat.shape()) + " vs " +
                     to_string(latents.shape()));
  }
  return mean(square(sub(latents_hat, latents)));
}

Tensor lfq_entropy_loss(const Tensor& z) {
  const Tensor logits = scale(z, 2.0);
  const double rows = static_cast<double>(z.rows());
  const Tensor per_sample = scale(sum(bernoulli_entropy_from_logits(logits)), 1.0 / rows);
  const Tensor batch = sum(bernoulli_entropy(mean_rows(sigmoid(logits))));
  return sub(per_sample, batch);
}

Tensor lfq_commitment_loss(const Tensor& z, const Tensor& z_q) {
  if (z.shape() != z_q.shape()) throw ShapeError("lfq_commitment_loss: shape mismatch");
  return scale(sum(square(sub(z, detach(z_q)))), 1.0 / static_cast<double>(z.rows()));
}

Tensor lfq_loss(const Tensor& z, const LossWeights& w) {
  return add(scale(lfq_entropy_loss(z), w.ent), scale(lfq_commitment_loss(z, sign_ste(z)), w.commit));
}

SyntheticTargetProvider::SyntheticTargetProvider(std::size_t codebook, std::size_t block, std::uint64_t seed)
    : codebook_(codebook), block_(block) {
  if (codebook == 0 || block == 0) throw Error("target provider: empty codebook or block");
  Rng rng(seed);
  std::uniform_real_distribution<double> base(0.0, 1.0);
  std::uniform_real_distribution<double> slope(-0.5, 0.5);
  const std::size_t dim = 3 * block * block;
  centroids_.resize(codebook * dim);
  const double mid = (static_cast<double>(block) - 1.0) / 2.0;
  for (std::size_t k = 0; k < codebook; ++k) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double b = base(rng);
      const double gy = slope(rng);
      const double gx = slope(rng);
      for (std::size_t y = 0; y < block; ++y) {
        for (std::size_t x = 0; x < block; ++x) {
          const double v = b + gy * (static_cast<double>(y) - mid) / static_cast<double>(block) +
                           gx * (static_cast<double>(x) - mid) / static_cast<double>(block);
          centroids_[k * dim + (c * block + y) * block + x] = v;
        }
      }
    }
  }
}

std::vector<std::size_t> SyntheticTargetProvider::codes(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % block_ != 0 || image.dim(2) % block_ != 0) {
    throw ShapeError("target provider: image " + to_string(image.shape()) + " does not tile into blocks");
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const std::size_t gh = h / block_;
  const std::size_t gw = w / block_;
  const std::size_t dim = 3 * block_ * block_;
  std::vector<double> vec(dim);
  std::vector<std::size_t> out(gh * gw);
  for (std::size_t by = 0; by < gh; ++by) {
    for (std::size_t bx = 0; bx < gw; ++bx) {
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < block_; ++y) {
          for (std::size_t x = 0; x < block_; ++x) {
            vec[(c * block_ + y) * block_ + x] = image[(c * h + by * block_ + y) * w + bx * block_ + x];
          }
        }
      }
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < codebook_; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double e = vec[i] - centroids_[k * dim + i];
          d += e * e;
        }
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      out[by * gw + bx] = best;
    }
  }
  return out;
}

std::vector<std::size_t> targets_for_tokens(std::span<const std::size_t> grid, std::size_t height, std::size_t width,
                                            const ModelConfig& cfg) {
  const std::size_t s = cfg.patch_size / cfg.target_block;
  const std::size_t gw = width / cfg.target_block;
  const std::size_t th = height / cfg.patch_size;
  const std::size_t tw = width / cfg.patch_size;
  if (grid.size() != (height / cfg.target_block) * gw) throw ShapeError("targets_for_tokens: grid size mismatch");
  std::vector<std::size_t> out;
  out.reserve(grid.size());
  for (std::size_t ty = 0; ty < th; ++ty) {
    for (std::size_t tx = 0; tx < tw; ++tx) {
      for (std::size_t sy = 0; sy < s; ++sy) {
        for (std::size_t sx = 0; sx < s; ++sx) out.push_back(grid[(ty * s + sy) * gw + tx * s + sx]);
      }
    }
  }
  return out;
}

Tensor synthetic_image(std::size_t height, std::size_t width, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img(Shape{3, height, width});
  auto d = img.mutable_data();
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = u(rng);
    const double gy = u(rng) - 0.5;
    const double gx = u(rng) - 0.5;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        d[(c * height + y) * width + x] = base + gy * static_cast<double>(y) / h + gx * static_cast<double>(x) / w;
      }
    }
  }
  const int shapes = 3 + static_cast<int>(u(rng) * 5.0);
  for (int s = 0; s < shapes; ++s) {
    const double cy = u(rng) * h;
    const double cx = u(rng) * w;
    const double ry = (0.05 + 0.25 * u(rng)) * h;
    const double rx = (0.05 + 0.25 * u(rng)) * w;
    const bool disc = u(rng) < 0.5;
    const double color[3] = {u(rng), u(rng), u(rng)};
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) d[(c * height + y) * width + x] = color[c];
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 0.01);
  for (double& v : d) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

std::vector<Tensor> synthetic_batch(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(height, width, rng));
  return out;
}

std::vector<Tensor> load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("corpus directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("corpus directory '" + dir + "' holds no .ppm images");
  std::vector<Tensor> out;
  for (const auto& f : files) out.push_back(read_ppm(f.string()));
  return out;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t widths[4] = {3, 16, 32, 32};
  for (std::size_t i = 0; i < 3; ++i) {
    layers_[i].weight = fixed_weights(4 * widths[i], widths[i + 1], rng);
    layers_[i].bias = Tensor(Shape{widths[i + 1]});
  }
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  std::vector<Tensor> out;
  Tensor x = image;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) throw ShapeError("feature extractor: odd spatial size");
    x = conv_stride2(x, layers_[i], true);
    out.push_back(x);
  }
  return out;
}

Tensor perceptual_loss(const Tensor& x_hat, const Tensor& x, const FeatureExtractor& fe) {
  const auto a = fe.features(x_hat);
  const auto b = fe.features(detach(x));
  Tensor total = mean(square(sub(a[0], b[0])));
  for (std::size_t i = 1; i < a.size(); ++i) total = add(total, mean(square(sub(a[i], b[i]))));
  return total;
}

PatchDiscriminator PatchDiscriminator::init(Rng& rng) {
  PatchDiscriminator d;
  d.embed = Linear::init(3 * 8 * 8, 32, rng);
  d.head = Linear::init(32, 1, rng);
  return d;
}

Tensor PatchDiscriminator::logits(const Tensor& image) const { return head(gelu(embed(patchify(image, 8)))); }

void PatchDiscriminator::collect(const std::string& prefix, ParamList& out) const {
  embed.collect(prefix + ".embed", out);
  head.collect(prefix + ".head", out);
}

Tensor discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  return add(mean(softplus(scale(real_logits, -1.0))), mean(softplus(fake_logits)));
}

Tensor generator_adversarial_loss(const Tensor& fake_logits) { return mean(softplus(scale(fake_logits, -1.0))); }

Stage1Loss stage1_loss(const MrtModel& model, const std::vector<Tensor>& images,
                       const std::vector<std::vector<std::size_t>>& token_targets, const LossWeights& w, Rng* noise) {
  if (images.empty() || images.size() != token_targets.size()) throw Error("stage1_loss: images and targets differ");
  const ModelConfig& cfg = model.config;
  const double inv_b = 1.0 / static_cast<double>(images.size());
  Tensor ce = Tensor::scalar(0.0);
  Tensor rate = Tensor::scalar(0.0);
  Tensor latent = Tensor::scalar(0.0);
  std::vector<Tensor> zs;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Tensor& x = images[b];
    const Tensor lat = encode_to_latents(x, model.encoder, cfg);
    const RcmForward f = rcm_forward(lat, model.rcm, noise);
    const WindowGrid grid = window_grid(cfg, x.dim(1), x.dim(2));
    const Tensor tokens = decode_tokens(f.latents_hat, model.decoder, grid, cfg);
    const Tensor logits =
        reshape(model.aux_head(tokens), {tokens.rows() * model.aux_blocks_per_token(), cfg.target_codebook});
    ce = add(ce, scale(cross_entropy(logits, token_targets[b]), inv_b));
    const double n_tokens = static_cast<double>(lat.rows());
    rate = add(rate, scale(add(f.latent_bits, f.hyper_bits), inv_b / n_tokens));
    latent = add(latent, scale(latent_alignment_loss(f.latents_hat, lat), inv_b));
    zs.push_back(f.z);
  }
  const Tensor z = concat_rows(zs);
  Stage1Loss out;
  out.ce = ce;
  out.rate = rate;
  out.latent = latent;
  out.ent = lfq_entropy_loss(z);
  out.commit = lfq_commitment_loss(z, sign_ste(z));
  out.total = add(add(add(ce, rate), latent), add(scale(out.ent, w.ent), scale(out.commit, w.commit)));
  return out;
}

Stage2Loss stage2_loss(const Tensor& x, const Tensor& x_hat, const Tensor& rate_bits, const LossWeights& w,
                       const FeatureExtractor& fe, const PatchDiscriminator* disc) {
  if (x.shape() != x_hat.shape()) throw ShapeError("stage2_loss: image shapes differ");
  Stage2Loss out;
  out.l1 = mean(abs(sub(x_hat, detach(x))));
  out.perceptual = perceptual_loss(x_hat, x, fe);
  out.adv = disc != nullptr ? generator_adversarial_loss(disc->logits(x_hat)) : Tensor::scalar(0.0);
  const double pixels = static_cast<double>(x.dim(1) * x.dim(2));
  out.rate = scale(rate_bits, 1.0 / pixels);
  out.total = add(add(out.l1, out.perceptual), add(scale(out.adv, w.adv), scale(out.rate, w.lambda)));
  return out;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto count = [&](const char* key, std::size_t& field) {
    const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(field));
    if (v < 0) throw Error(std::string("train config: negative ") + key);
    field = static_cast<std::size_t>(v);
  };
  c.stage = static_cast<int>(kv.get_int("stage", c.stage));
  count("steps", c.steps);
  count("batch", c.batch);
  count("height", c.height);
  count("width", c.width);
  count("log_every", c.log_every);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.adam.lr = kv.get_double("lr", c.adam.lr);
  c.adam.weight_decay = kv.get_double("weight_decay", c.adam.weight_decay);
  c.lambda_index = static_cast<int>(kv.get_int("lambda_index", c.lambda_index));
  if (c.lambda_index < 0 || c.lambda_index >= static_cast<int>(kLambdaTable.size())) {
    throw Error("train config: lambda_index must lie in [0, 3]");
  }
  c.weights.lambda = kv.get_double("lambda", kLambdaTable[static_cast<std::size_t>(c.lambda_index)]);
  c.weights.ent = kv.get_double("lambda_ent", c.weights.ent);
  c.weights.commit = kv.get_double("lambda_commit", c.weights.commit);
  c.weights.adv = kv.get_double("lambda_adv", c.weights.adv);
  c.init_checkpoint = kv.get("init", "");
  c.output_checkpoint = kv.get("output", "");
  c.data_dir = kv.get("data_dir", "");
  c.log_path = kv.get("log", "");
  if (c.stage != 1 && c.stage != 2) throw Error("train config: stage must be 1 or 2");
  if (c.batch == 0) throw Error("train config: batch must be positive");
  if (!(c.adam.lr > 0.0)) throw Error("train config: lr must be positive");
  if (c.weights.ent < 0 || c.weights.commit < 0 || c.weights.adv < 0 || c.weights.lambda < 0) {
    throw Error("train config: loss weights must be nonnegative");
  }
  return c;
}

namespace {

ParamList stage1_params(const MrtModel& m) { return m.all_params(); }

ParamList stage2_params(const MrtModel& m) {
  ParamList p = m.decoder_params();
  p.append(m.rcm_params());
  return p;
}

std::vector<std::vector<std::size_t>> batch_targets(const MrtModel& m, const std::vector<Tensor>& images) {
  const SyntheticTargetProvider provider(m.config.target_codebook, m.config.target_block, m.config.seed + 7919);
  std::vector<std::vector<std::size_t>> out;
  for (const auto& x : images) out.push_back(targets_for_tokens(provider.codes(x), x.dim(1), x.dim(2), m.config));
  return out;
}

}  // namespace

Stage1Trainer::Stage1Trainer(MrtModel& model, const TrainConfig& cfg, std::vector<Tensor> images)
    : model_(model),
      cfg_(cfg),
      images_(std::move(images)),
      targets_(batch_targets(model, images_)),
      opt_(stage1_params(model), cfg.adam),
      noise_(cfg.seed ^ 0x5eed5eedULL) {}

Stage1Terms Stage1Trainer::step() {
  Tape tape;
  Stage1Terms t{};
  {
    TapeScope scope(tape);
    const Stage1Loss loss = stage1_loss(model_, images_, targets_, cfg_.weights, &noise_);
    t = {loss.total.item(), loss.ce.item(), loss.ent.item(), loss.commit.item(), loss.rate.item(), loss.latent.item()};
    opt_.zero_grad();
    tape.backward(loss.total);
  }
  opt_.step();
  return t;
}

Stage1Terms Stage1Trainer::evaluate() const {
  const Stage1Loss loss = stage1_loss(model_, images_, targets_, cfg_.weights, nullptr);
  return {loss.total.item(), loss.ce.item(), loss.ent.item(), loss.commit.item(), loss.rate.item(), loss.latent.item()};
}

Stage2Trainer::Stage2Trainer(MrtModel& model, const TrainConfig& cfg, std::vector<Tensor> images)
    : model_(model),
      cfg_(cfg),
      images_(std::move(images)),
      fe_(cfg.seed + 104729),
      disc_([&] {
        Rng rng(cfg.seed + 1299709);
        return PatchDiscriminator::init(rng);
      }()),
      opt_(stage2_params(model), cfg.adam),
      disc_opt_(
          [&] {
            ParamList p;
            disc_.collect("disc", p);
            return p;
          }(),
          cfg.adam),
      noise_(cfg.seed ^ 0x5eed5eedULL) {
  for (const auto& x : images_) latents_.push_back(detach(encode_to_latents(x, model_.encoder, model_.config)));
}

Stage2Terms Stage2Trainer::step() {
  const double inv_b = 1.0 / static_cast<double>(images_.size());
  Stage2Terms t{};
  std::vector<Tensor> fakes;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < images_.size(); ++b) {
      const Tensor& x = images_[b];
      const RcmForward f = rcm_forward(latents_[b], model_.rcm, &noise_);
      const Tensor x_hat = decode_from_latents(f.latents_hat, model_.decoder, x.dim(1), x.dim(2), model_.config);
      const Stage2Loss loss = stage2_loss(x, x_hat, add(f.latent_bits, f.hyper_bits), cfg_.weights, fe_, &disc_);
      total = add(total, scale(loss.total, inv_b));
      t.l1 += loss.l1.item() * inv_b;
      t.perceptual += loss.perceptual.item() * inv_b;
      t.adv += loss.adv.item() * inv_b;
      t.rate += loss.rate.item() * inv_b;
      fakes.push_back(detach(x_hat));
    }
    t.total = total.item();
    opt_.zero_grad();
    tape.backward(total);
  }
  opt_.step();

  {
    Tape tape;
    TapeScope scope(tape);
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < images_.size(); ++b) {
      total = add(total, scale(discriminator_loss(disc_.logits(images_[b]), disc_.logits(fakes[b])), inv_b));
    }
    t.disc = total.item();
    disc_opt_.zero_grad();
    tape.backward(total);
  }
  disc_opt_.step();
  return t;
}

}  // namespace mrt
