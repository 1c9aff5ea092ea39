// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mrt/analysis.hpp"
#include "mrt/birwkv.hpp"
#include "mrt/cli.hpp"
#include "mrt/codec.hpp"
#include "mrt/image_io.hpp"
#include "mrt/model.hpp"
#include "mrt/training.hpp"

namespace py = pybind11;
using namespace mrt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::span<const std::uint8_t> as_span(const py::bytes& b) {
  const std::string_view view(b);
  return {reinterpret_cast<const std::uint8_t*>(view.data()), view.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

MrtModel make_model(const std::string& preset, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::from_text("preset = " + preset + "\n");
  cfg.seed = seed;
  return MrtModel::init(cfg);
}

BiWkvParams wkv_params(const Array& w_raw, const Array& u) {
  BiWkvParams p;
  p.w_raw = to_tensor(w_raw);
  p.u = to_tensor(u);
  return p;
}

}  // namespace

PYBIND11_MODULE(_mrt, m) {
  m.doc() = "MRT extreme image codec";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DecodeError>(m, "DecodeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<MrtModel>(m, "Model")
      .def(py::init(&make_model), py::arg("preset") = "desk", py::arg("seed") = 0,
           "Randomly initialized model from a preset: desk, tiny or full.")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const MrtModel& self, const std::string& path) { save_checkpoint(path, self); },
           py::arg("path"))
      .def_property_readonly("config_text", [](const MrtModel& self) { return self.config.to_text(); })
      .def_property_readonly("lambda_index", &MrtModel::lambda_index)
      .def_property_readonly("hyper_channels", [](const MrtModel& self) { return self.config.hyper_channels; })
      .def_property_readonly("latent_channels", [](const MrtModel& self) { return self.config.latent_channels; })
      .def_property_readonly("parameter_count", [](const MrtModel& self) {
        std::size_t n = 0;
        for (const auto& [name, t] : self.all_params().entries()) n += t.size();
        return n;
      });

  m.def(
      "encode_latents",
      [](const MrtModel& model, const Array& image) {
        return to_array(encode_to_latents(to_tensor(image), model.encoder, model.config));
      },
      py::arg("model"), py::arg("image"), "Latent tokens [N*32 x c] of a [3 x H x W] image in [0, 1].");

  m.def(
      "compress",
      [](const MrtModel& model, const Array& image, int lambda_index) {
        if (lambda_index < 0 || lambda_index > 255) throw Error("lambda_index out of range");
        const CompressResult r = compress(model, to_tensor(image), static_cast<std::uint8_t>(lambda_index));
        py::dict d;
        d["bitstream"] = to_bytes(r.bitstream);
        d["bpp"] = r.bpp();
        d["payload_bits"] = r.payload_bits();
        d["estimated_bits"] = r.estimated_bits();
        d["tokens"] = r.symbols.tokens;
        d["y_hat"] = r.symbols.y_hat;
        d["z_indices"] = r.symbols.z_hat.indices();
        return d;
      },
      py::arg("model"), py::arg("image"), py::arg("lambda_index") = 0);

  m.def(
      "decompress",
      [](const MrtModel& model, const py::bytes& stream) {
        const DecompressResult r = decompress(model, as_span(stream));
        py::dict d;
        d["image"] = to_array(r.image);
        d["y_hat"] = r.symbols.y_hat;
        d["z_indices"] = r.symbols.z_hat.indices();
        d["lambda_index"] = static_cast<int>(r.header.lambda_index);
        return d;
      },
      py::arg("model"), py::arg("bitstream"));

  m.def(
      "bi_wkv",
      [](const Array& k, const Array& v, const Array& w_raw, const Array& u, bool naive) {
        const BiWkvParams p = wkv_params(w_raw, u);
        return to_array(naive ? bi_wkv_naive(to_tensor(k), to_tensor(v), p) : bi_wkv_scan(to_tensor(k), to_tensor(v), p));
      },
      py::arg("k"), py::arg("v"), py::arg("w_raw"), py::arg("u"), py::arg("naive") = false,
      "Bidirectional WKV attention of [T x c] keys and values.");

  m.def(
      "lfq_quantize",
      [](const Array& z) {
        const LfqCode code = lfq_quantize(to_tensor(z));
        Array signs(std::vector<py::ssize_t>{static_cast<py::ssize_t>(code.tokens), static_cast<py::ssize_t>(code.dims)});
        std::copy(code.signs.begin(), code.signs.end(), signs.mutable_data());
        return py::make_tuple(signs, code.indices());
      },
      py::arg("z"), "Sign quantization; returns (signs, indices).");
  m.def(
      "codebook_entropy", [](const std::vector<std::uint32_t>& indices) { return codebook_entropy(indices); },
      py::arg("indices"), "Empirical index entropy in bits.");

  m.def(
      "redundancy_metrics",
      [](const Array& features) {
        const RedundancyReport r = redundancy_metrics(to_tensor(features));
        py::dict d;
        d["mfc"] = r.mfc;
        d["mean_cosine"] = r.mean_cosine;
        d["mean_l2"] = r.mean_l2;
        d["token_pairs"] = r.token_pairs;
        d["skipped_token_pairs"] = r.skipped_token_pairs;
        d["channel_pairs"] = r.channel_pairs;
        d["skipped_channel_pairs"] = r.skipped_channel_pairs;
        return d;
      },
      py::arg("features"));

  m.def(
      "compute_erf",
      [](const MrtModel& model, const Array& image, std::size_t window, double clip_fraction) {
        const ErfMap e = compute_erf(model, to_tensor(image), window, clip_fraction);
        const Shape shape = {e.height, e.width};
        py::dict d;
        d["raw"] = to_array(Tensor(shape, e.raw));
        d["clipped"] = to_array(Tensor(shape, e.clipped));
        d["threshold"] = e.threshold;
        d["outside_fraction"] = e.outside_fraction;
        return d;
      },
      py::arg("model"), py::arg("image"), py::arg("window"), py::arg("clip_fraction") = 0.001);

  m.def(
      "train",
      [](MrtModel& model, int stage, std::size_t steps, std::size_t batch, std::size_t height, std::size_t width,
         std::uint64_t seed, double lr, int lambda_index) {
        if (lambda_index < 0 || lambda_index >= static_cast<int>(kLambdaTable.size())) {
          throw Error("lambda_index must lie in [0, 3]");
        }
        TrainConfig cfg;
        cfg.stage = stage;
        cfg.steps = steps;
        cfg.batch = batch;
        cfg.seed = seed;
        cfg.adam.lr = lr;
        cfg.lambda_index = lambda_index;
        cfg.weights.lambda = kLambdaTable[static_cast<std::size_t>(lambda_index)];
        auto images = synthetic_batch(batch, height, width, seed);
        std::vector<double> totals;
        py::gil_scoped_release release;
        if (stage == 1) {
          Stage1Trainer t(model, cfg, std::move(images));
          for (std::size_t s = 0; s < steps; ++s) totals.push_back(t.step().total);
        } else if (stage == 2) {
          Stage2Trainer t(model, cfg, std::move(images));
          for (std::size_t s = 0; s < steps; ++s) totals.push_back(t.step().total);
          model.metadata.set("lambda_index", std::to_string(lambda_index));
        } else {
          throw Error("stage must be 1 or 2");
        }
        return totals;
      },
      py::arg("model"), py::arg("stage"), py::arg("steps"), py::arg("batch") = 4, py::arg("height") = 256,
      py::arg("width") = 256, py::arg("seed") = 0, py::arg("lr") = 3e-4, py::arg("lambda_index") = 0,
      "Trains on a seeded synthetic batch; returns the loss per step.");

  m.def(
      "synthetic_image",
      [](std::size_t height, std::size_t width, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(synthetic_image(height, width, rng));
      },
      py::arg("height"), py::arg("width"), py::arg("seed") = 0);

  m.def("read_ppm", [](const std::string& path) { return to_array(read_ppm(path)); }, py::arg("path"));
  m.def("write_ppm", [](const std::string& path, const Array& image) { write_ppm(path, to_tensor(image)); },
        py::arg("path"), py::arg("image"));

  m.def(
      "cli_main",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv = {"mrt"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line; returns (exit code, stdout, stderr).");
}
