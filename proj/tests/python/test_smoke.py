# Copyright 2026 The MRT Codec Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import mrt_codec as mrt


def wkv_reference(k, v, w_raw, u):
    t_len, _ = k.shape
    w = np.exp(w_raw)
    out = np.empty_like(v)
    for t in range(t_len):
        num = np.exp(u + k[t]) * v[t]
        den = np.exp(u + k[t])
        for i in range(t_len):
            if i == t:
                continue
            e = np.exp(-(abs(t - i) - 1) * w / t_len + k[i])
            num = num + e * v[i]
            den = den + e
        out[t] = num / den
    return out


def test_bi_wkv_matches_direct_sum():
    rng = np.random.default_rng(0)
    k = rng.uniform(-2, 2, (9, 4))
    v = rng.uniform(-1, 1, (9, 4))
    w_raw = rng.uniform(-1, 1, 4)
    u = rng.uniform(-1, 1, 4)
    ref = wkv_reference(k, v, w_raw, u)
    np.testing.assert_allclose(mrt.bi_wkv(k, v, w_raw, u), ref, rtol=1e-10)
    np.testing.assert_allclose(mrt.bi_wkv(k, v, w_raw, u, naive=True), ref, rtol=1e-10)
    with pytest.raises(ValueError):
        mrt.bi_wkv(k, v[:3], w_raw, u)


def test_compress_round_trip():
    model = mrt.Model("tiny", seed=1)
    image = mrt.synthetic_image(200, 300, seed=2)
    enc = mrt.compress(model, image)
    assert enc["tokens"] == 64
    assert enc["bpp"] == pytest.approx(8 * len(enc["bitstream"]) / (200 * 300))
    dec = mrt.decompress(model, enc["bitstream"])
    assert dec["image"].shape == (3, 200, 300)
    assert dec["y_hat"] == enc["y_hat"]
    assert dec["z_indices"] == enc["z_indices"]
    with pytest.raises(ValueError):
        mrt.decompress(model, enc["bitstream"][:-2])


def test_lfq_and_entropy():
    signs, idx = mrt.lfq_quantize(np.array([[0.3, -0.1, 0.0], [-2.0, 5.0, -0.0]]))
    assert signs.tolist() == [[1, -1, 1], [-1, 1, 1]]
    assert idx == [0b101, 0b110]
    assert mrt.codebook_entropy(list(range(16384))) == pytest.approx(14.0, abs=1e-9)


def test_redundancy_metrics():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(6, 5))
    r = mrt.redundancy_metrics(f)
    norms = np.linalg.norm(f, axis=1)
    cos = [f[i] @ f[j] / (norms[i] * norms[j]) for i in range(6) for j in range(i + 1, 6)]
    l2 = [np.linalg.norm(f[i] - f[j]) for i in range(6) for j in range(i + 1, 6)]
    corr = np.corrcoef(f.T)
    mfc = np.mean([abs(corr[a, b]) for a in range(5) for b in range(a + 1, 5)])
    assert r["mean_cosine"] == pytest.approx(np.mean(cos), abs=1e-12)
    assert r["mean_l2"] == pytest.approx(np.mean(l2), abs=1e-12)
    assert r["mfc"] == pytest.approx(mfc, abs=1e-12)


def test_erf_and_latents():
    model = mrt.Model("tiny")
    image = mrt.synthetic_image(256, 512, seed=4)
    lat = mrt.encode_latents(model, image)
    assert lat.shape == (64, 16)
    erf = mrt.compute_erf(model, image, window=1)
    assert erf["raw"].shape == (256, 512)
    assert (erf["raw"] >= 0).all()
    assert 0.0 < erf["outside_fraction"] < 1.0


def test_training_and_checkpoint(tmp_path):
    model = mrt.Model("tiny", seed=5)
    losses = mrt.train(model, stage=1, steps=3, batch=1)
    assert len(losses) == 3
    assert all(math.isfinite(x) for x in losses)
    mrt.train(model, stage=2, steps=2, batch=1, lambda_index=2)
    assert model.lambda_index == 2
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    again = mrt.Model.load(path)
    assert again.config_text == model.config_text
    assert again.parameter_count == model.parameter_count
    with pytest.raises(OSError):
        mrt.Model.load(str(tmp_path / "missing.ckpt"))


def test_cli(tmp_path):
    code, _, err = mrt.cli_main(["encode", "--bogus"])
    assert code == 2
    assert err
    ckpt = str(tmp_path / "tiny.ckpt")
    assert mrt.cli_main(["init-model", "--preset", "tiny", "--out", ckpt])[0] == 0
    img = str(tmp_path / "in.ppm")
    mrt.write_ppm(img, mrt.synthetic_image(64, 64, seed=6))
    stream = str(tmp_path / "x.mrt")
    code, out, _ = mrt.cli_main(["encode", img, stream, "--model", ckpt])
    assert code == 0
    assert "bpp=" in out
    out_img = str(tmp_path / "out.ppm")
    assert mrt.cli_main(["decode", stream, out_img, "--model", ckpt])[0] == 0
    assert mrt.read_ppm(out_img).shape == (3, 64, 64)
