// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrt/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrt/analysis.hpp"
#include "mrt/codec.hpp"
#include "mrt/image_io.hpp"
#include "mrt/training.hpp"

namespace mrt {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string input;
  std::string output;
  std::string model;
  int lambda_index = -1;
  int stage = 0;
  std::string config;
  std::string image;
  std::string corpus;
  std::vector<std::string> checkpoints;
  std::size_t window = 0;
  double clip_fraction = 0.001;
  std::size_t height = 512;
  std::size_t width = 256;
  std::string preset = "desk";
};

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_atomic(path, text);
  }
}

MrtModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--model is required");
  return load_checkpoint(path);
}

Tensor analysis_image(const Options& o) {
  if (!o.image.empty()) return read_ppm(o.image);
  Rng rng(o.seed);
  return synthetic_image(o.height, o.width, rng);
}

std::vector<Tensor> corpus_or_synthetic(const Options& o, std::vector<std::string>* names) {
  if (!o.corpus.empty()) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (!fs::is_directory(o.corpus)) throw IoError("corpus directory '" + o.corpus + "' does not exist");
    for (const auto& e : fs::directory_iterator(o.corpus)) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (names != nullptr) {
      for (const auto& f : files) names->push_back(f.stem().string());
    }
    return load_corpus(o.corpus);
  }
  auto images = synthetic_batch(4, o.height, o.width, o.seed);
  if (names != nullptr) {
    for (std::size_t i = 0; i < images.size(); ++i) names->push_back("synthetic" + std::to_string(i));
  }
  return images;
}

int run_encode(const Options& o, std::ostream& out) {
  const Tensor image = read_ppm(o.input);
  const MrtModel model = load_model(o.model);
  const int own = model.lambda_index();
  int k = o.lambda_index >= 0 ? o.lambda_index : std::max(own, 0);
  if (k >= static_cast<int>(kLambdaTable.size())) throw UsageError("--lambda-index must lie in [0, 3]");
  if (own >= 0 && k != own) {
    throw UsageError("--lambda-index " + std::to_string(k) + " does not match the checkpoint (trained for " +
                     std::to_string(own) + ")");
  }
  const CompressResult r = compress(model, image, static_cast<std::uint8_t>(k));
  write_file_atomic(o.output, r.bitstream);
  out << "bpp=" << format_g6(r.bpp()) << " bytes=" << r.bitstream.size() << " width=" << r.header.orig_width
      << " height=" << r.header.orig_height << "\n";
  return 0;
}

int run_decode(const Options& o, std::ostream& out) {
  const std::vector<std::uint8_t> bytes = read_file(o.input);
  const MrtModel model = load_model(o.model);
  const DecompressResult r = decompress(model, bytes);
  const int own = model.lambda_index();
  if (own >= 0 && r.header.lambda_index != own) {
    throw DecodeError("stream was coded for lambda index " + std::to_string(r.header.lambda_index) +
                      " but the checkpoint is lambda index " + std::to_string(own));
  }
  write_ppm(o.output, r.image);
  out << "width=" << r.header.orig_width << " height=" << r.header.orig_height << "\n";
  return 0;
}

int run_train(const Options& o, std::ostream& out) {
  if (o.config.empty()) throw UsageError("--config is required");
  const std::vector<std::uint8_t> raw = read_file(o.config);
  const std::string text(raw.begin(), raw.end());
  KeyValues kv = KeyValues::parse(text);
  kv.set("stage", std::to_string(o.stage));
  if (o.seed_given || !kv.has("seed")) kv.set("seed", std::to_string(o.seed));
  const TrainConfig cfg = TrainConfig::from_key_values(kv);
  if (cfg.output_checkpoint.empty()) throw UsageError("train config needs an 'output' checkpoint path");

  MrtModel model;
  if (!cfg.init_checkpoint.empty()) {
    model = load_checkpoint(cfg.init_checkpoint);
  } else if (cfg.stage == 2) {
    throw UsageError("stage 2 needs an 'init' checkpoint from stage 1");
  } else {
    model = MrtModel::init(ModelConfig::from_text(text));
  }

  std::vector<Tensor> images;
  if (!cfg.data_dir.empty()) {
    for (auto& x : load_corpus(cfg.data_dir)) {
      if (images.size() == cfg.batch) break;
      const std::size_t unit = model.config.window_pixels();
      images.push_back(reflect_pad(x, round_up(x.dim(1), unit), round_up(x.dim(2), unit)));
    }
  } else {
    images = synthetic_batch(cfg.batch, cfg.height, cfg.width, cfg.seed);
  }

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw IoError("cannot write log '" + cfg.log_path + "'");
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto progress = [&](std::size_t step, const std::string& line) {
    if (log) log << step << ',' << line << '\n';
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "step " << step << " " << line << " (" << format_g6(secs) << " s)\n" << std::flush;
    }
  };
  if (cfg.stage == 1) {
    if (log) log << "step,total,ce,ent,commit,rate,latent\n";
    Stage1Trainer trainer(model, cfg, images);
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
      const Stage1Terms t = trainer.step();
      progress(s, format_g6(t.total) + "," + format_g6(t.ce) + "," + format_g6(t.ent) + "," + format_g6(t.commit) +
                      "," + format_g6(t.rate) + "," + format_g6(t.latent));
    }
    model.metadata.set("stage", "1");
  } else {
    if (log) log << "step,total,l1,perceptual,adv,rate_bpp,disc\n";
    Stage2Trainer trainer(model, cfg, images);
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
      const Stage2Terms t = trainer.step();
      progress(s, format_g6(t.total) + "," + format_g6(t.l1) + "," + format_g6(t.perceptual) + "," +
                      format_g6(t.adv) + "," + format_g6(t.rate) + "," + format_g6(t.disc));
    }
    model.metadata.set("stage", "2");
    model.metadata.set("lambda_index", std::to_string(cfg.lambda_index));
    model.metadata.set("lambda", format_g6(cfg.weights.lambda));
  }
  model.metadata.set("steps", std::to_string(cfg.steps));
  save_checkpoint(cfg.output_checkpoint, model);
  out << "saved " << cfg.output_checkpoint << "\n";
  return 0;
}

int run_erf(const Options& o, std::ostream& out) {
  const MrtModel model = load_model(o.model);
  const Tensor image = analysis_image(o);
  const ErfMap m = compute_erf(model, image, o.window, o.clip_fraction);
  if (!o.output.empty()) {
    std::ostringstream os;
    for (std::size_t y = 0; y < m.height; ++y) {
      for (std::size_t x = 0; x < m.width; ++x) os << (x ? "," : "") << format_g6(m.clipped[y * m.width + x]);
      os << '\n';
    }
    write_text_atomic(o.output, os.str());
  }
  out << "window,outside_fraction,clip_count,threshold\n"
      << m.target_window << ',' << format_g6(m.outside_fraction) << ',' << m.clip_count << ','
      << format_g6(m.threshold) << '\n';
  return 0;
}

int run_redundancy(const Options& o, std::ostream& out) {
  const MrtModel model = load_model(o.model);
  const Tensor image = analysis_image(o);
  const std::size_t unit = model.config.window_pixels();
  const Tensor x = reflect_pad(image, round_up(image.dim(1), unit), round_up(image.dim(2), unit));
  const RedundancyReport r = redundancy_metrics(encode_to_latents(x, model.encoder, model.config));
  std::ostringstream os;
  os << "mfc,mean_cosine,mean_l2,token_pairs,skipped_token_pairs,channel_pairs,skipped_channel_pairs\n"
     << format_g6(r.mfc) << ',' << format_g6(r.mean_cosine) << ',' << format_g6(r.mean_l2) << ',' << r.token_pairs
     << ',' << r.skipped_token_pairs << ',' << r.channel_pairs << ',' << r.skipped_channel_pairs << '\n';
  emit(o.output, os.str(), out);
  return 0;
}

int run_rd(const Options& o, std::ostream& out) {
  if (o.checkpoints.empty()) throw UsageError("--checkpoints is required");
  for (const auto& c : o.checkpoints) {
    if (!std::filesystem::exists(c)) throw IoError("missing checkpoint '" + c + "'");
  }
  std::vector<std::string> names;
  const auto images = corpus_or_synthetic(o, &names);
  std::ostringstream os;
  write_rd_csv(os, rd_harness(o.checkpoints, names, images, o.seed));
  emit(o.output, os.str(), out);
  return 0;
}

int run_codebook(const Options& o, std::ostream& out) {
  const MrtModel model = load_model(o.model);
  const auto images = corpus_or_synthetic(o, nullptr);
  const CodebookReport r = codebook_report(model, images, o.seed);
  std::ostringstream os;
  os << "method,entropy_bits,codebook_size,tokens\n"
     << "lfq," << format_g6(r.lfq_entropy) << ',' << (std::size_t{1} << model.config.hyper_channels) << ','
     << r.tokens << '\n'
     << "vq," << format_g6(r.vq_entropy) << ',' << r.codebook_size << ',' << r.tokens << '\n';
  emit(o.output, os.str(), out);
  return 0;
}

int run_init(const Options& o, std::ostream& out) {
  if (o.output.empty()) throw UsageError("--out is required");
  ModelConfig cfg;
  if (!o.config.empty()) {
    const auto raw = read_file(o.config);
    cfg = ModelConfig::from_text(std::string(raw.begin(), raw.end()));
  } else {
    cfg = ModelConfig::from_text("preset = " + o.preset + "\n");
  }
  cfg.seed = o.seed;
  save_checkpoint(o.output, MrtModel::init(cfg));
  out << "saved " << o.output << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MRT extreme image codec"};
  app.require_subcommand(1);
  Options o;
  std::vector<CLI::Option*> seed_flags;
  auto seed = [&](CLI::App* sub) {
    seed_flags.push_back(sub->add_option("--seed", o.seed, "Random seed")->capture_default_str());
  };

  auto* enc = app.add_subcommand("encode", "Compress a PPM image to an .mrt bitstream");
  enc->add_option("input", o.input, "Input .ppm")->required();
  enc->add_option("output", o.output, "Output .mrt")->required();
  enc->add_option("--model", o.model, "Checkpoint")->required();
  enc->add_option("--lambda-index", o.lambda_index, "Operating point 0..3 (lambda 20, 10, 5, 2.5)");
  seed(enc);

  auto* dec = app.add_subcommand("decode", "Reconstruct a PPM image from an .mrt bitstream");
  dec->add_option("input", o.input, "Input .mrt")->required();
  dec->add_option("output", o.output, "Output .ppm")->required();
  dec->add_option("--model", o.model, "Checkpoint")->required();
  seed(dec);

  auto* train = app.add_subcommand("train", "Run stage-1 or stage-2 training from a key=value config");
  train->add_option("--stage", o.stage, "Training stage")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--config", o.config, "Config file")->required();
  seed(train);

  auto* init = app.add_subcommand("init-model", "Write a randomly initialized checkpoint");
  init->add_option("--out", o.output, "Output checkpoint")->required();
  init->add_option("--preset", o.preset, "desk, tiny or full")->check(CLI::IsMember({"desk", "tiny", "full"}));
  init->add_option("--config", o.config, "Model config file (overrides --preset)");
  seed(init);

  auto* analyze = app.add_subcommand("analyze", "Analysis procedures");
  analyze->require_subcommand(1);
  auto image_opts = [&](CLI::App* sub) {
    sub->add_option("--image", o.image, "Input .ppm (default: a seeded synthetic image)");
    sub->add_option("--height", o.height, "Synthetic image height")->capture_default_str();
    sub->add_option("--width", o.width, "Synthetic image width")->capture_default_str();
  };
  auto* erf = analyze->add_subcommand("erf", "Effective receptive field of one window's latents");
  erf->add_option("--model", o.model, "Checkpoint")->required();
  image_opts(erf);
  erf->add_option("--window", o.window, "Target window (row-major)")->capture_default_str();
  erf->add_option("--clip-fraction", o.clip_fraction, "Share of pixels clipped at the top")->capture_default_str();
  erf->add_option("--out", o.output, "CSV of the clipped map");
  seed(erf);

  auto* red = analyze->add_subcommand("redundancy", "Spatial and channel redundancy of the latents");
  red->add_option("--model", o.model, "Checkpoint")->required();
  image_opts(red);
  red->add_option("--out", o.output, "Output CSV (default: stdout)");
  seed(red);

  auto* rd = analyze->add_subcommand("rd", "Rate-distortion CSV over a corpus");
  rd->add_option("--checkpoints", o.checkpoints, "One checkpoint per lambda")->required();
  rd->add_option("--corpus", o.corpus, "Directory of .ppm images (default: seeded synthetic set)");
  rd->add_option("--height", o.height, "Synthetic image height")->capture_default_str();
  rd->add_option("--width", o.width, "Synthetic image width")->capture_default_str();
  rd->add_option("--out", o.output, "Output CSV (default: stdout)");
  seed(rd);

  auto* cb = analyze->add_subcommand("codebook-entropy", "Hyper index entropy, LFQ against VQ");
  cb->add_option("--model", o.model, "Checkpoint")->required();
  cb->add_option("--corpus", o.corpus, "Directory of .ppm images (default: seeded synthetic set)");
  cb->add_option("--height", o.height, "Synthetic image height")->capture_default_str();
  cb->add_option("--width", o.width, "Synthetic image width")->capture_default_str();
  cb->add_option("--out", o.output, "Output CSV (default: stdout)");
  seed(cb);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  for (const auto* f : seed_flags) o.seed_given = o.seed_given || f->count() > 0;

  try {
    if (enc->parsed()) return run_encode(o, out);
    if (dec->parsed()) return run_decode(o, out);
    if (train->parsed()) return run_train(o, out);
    if (init->parsed()) return run_init(o, out);
    if (erf->parsed()) return run_erf(o, out);
    if (red->parsed()) return run_redundancy(o, out);
    if (rd->parsed()) return run_rd(o, out);
    if (cb->parsed()) return run_codebook(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace mrt
