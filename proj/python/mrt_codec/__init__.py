# Copyright 2026 The MRT Codec Authors
# SPDX-License-Identifier: Apache-2.0
"""MRT extreme image codec."""

from ._mrt import (
    DecodeError,
    Error,
    IoError,
    Model,
    ShapeError,
    bi_wkv,
    cli_main,
    codebook_entropy,
    compress,
    compute_erf,
    decompress,
    encode_latents,
    lfq_quantize,
    read_ppm,
    redundancy_metrics,
    synthetic_image,
    train,
    write_ppm,
)

__all__ = [
    "DecodeError",
    "Error",
    "IoError",
    "Model",
    "ShapeError",
    "bi_wkv",
    "cli_main",
    "codebook_entropy",
    "compress",
    "compute_erf",
    "decompress",
    "encode_latents",
    "lfq_quantize",
    "read_ppm",
    "redundancy_metrics",
    "synthetic_image",
    "train",
    "write_ppm",
]
