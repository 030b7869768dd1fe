import numpy as np
import pytest

import hsifuse


def cube(seed, shape=(6, 16, 16)):
    return np.random.default_rng(seed).uniform(0.05, 0.95, size=shape)


def test_psnr_matches_numpy():
    a, b = cube(0), cube(1)
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    expected = np.mean(10 * np.log10(1.0 / mse))
    assert hsifuse.psnr(a, b) == pytest.approx(expected, abs=1e-9)
    assert hsifuse.psnr(a, a) == pytest.approx(100.0)


def test_sam_matches_numpy():
    a, b = cube(2), cube(3)
    dot = (a * b).sum(axis=0)
    cos = dot / (np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0))
    expected = np.degrees(np.arccos(np.clip(cos, -1, 1))).mean()
    assert hsifuse.sam(a, b) == pytest.approx(expected, abs=1e-6)
    assert hsifuse.sam(a, 3.0 * a) == pytest.approx(0.0, abs=1e-6)


def test_evaluate_keys_and_qnr():
    z = hsifuse.gen_scene(seed=4, bands=8, size=32)
    lr = hsifuse.degrade_spatial(z, 4)
    msi = hsifuse.degrade_spectral(z, 3)
    assert lr.shape == (8, 8, 8)
    assert msi.shape == (3, 32, 32)
    r = hsifuse.evaluate(z, z, 4.0)
    assert set(r) == {"psnr_db", "sam_deg", "ssim", "uiqi", "ergas"}
    r = hsifuse.evaluate(z, z, 4.0, lr, msi)
    assert 0.0 <= r["qnr"] <= 1.0
    q, dl, ds = hsifuse.qnr(z, lr, msi, 4)
    assert q == pytest.approx((1 - dl) * (1 - ds))


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        hsifuse.psnr(cube(0), cube(1, (6, 16, 8)))
    with pytest.raises(ValueError):
        hsifuse.psnr(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(hsifuse.ConfigError):
        hsifuse.gradcheck("nonsense")


def test_cube_round_trip(tmp_path):
    a = cube(5)
    path = str(tmp_path / "a.hsc")
    hsifuse.write_cube(path, a)
    b = hsifuse.read_cube(path)
    assert b.shape == a.shape
    np.testing.assert_array_equal(b, a.astype(np.float32).astype(np.float64))
    (tmp_path / "bad.hsc").write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(hsifuse.FormatError):
        hsifuse.read_cube(str(tmp_path / "bad.hsc"))


def test_anisotropy_of_stripes():
    x = np.arange(32)
    stripes = np.tile(0.5 + 0.4 * np.sin(x / 2.0), (2, 32, 1))
    m = hsifuse.anisotropy_map(stripes)
    assert m.shape == (1, 32, 32)
    assert m[0, 8:24, 8:24].mean() > 0.8


def test_train_and_fuse(tmp_path):
    data = str(tmp_path / "data")
    hsifuse.generate_dataset(data, seed=1, count=3, bands=6, msi_bands=3, size=32, ratio=2)
    settings = {
        "hidden": "8", "K": "2", "daci_levels": "2", "embed": "8", "predictor_width": "4",
        "predictor_hidden": "8", "patch": "16", "batch": "1", "holdout": "1", "steps": "4", "eval_every": "2",
    }
    ckpt = str(tmp_path / "m.ckpt")
    log = hsifuse.train(data, ckpt, settings)
    assert [e["step"] for e in log] == [2, 4]
    model = hsifuse.Model(ckpt)
    assert model.step == 4
    assert model.parameters > 0
    lr = hsifuse.read_cube(str(tmp_path / "data" / "scene_002_lr.hsc"))
    msi = hsifuse.read_cube(str(tmp_path / "data" / "scene_002_msi.hsc"))
    z_hat, z_init = model.fuse(lr, msi)
    assert z_hat.shape == (6, 32, 32)
    assert z_init.shape == (6, 32, 32)
    assert np.isfinite(z_hat).all()
    with pytest.raises(ValueError):
        hsifuse.train(data, ckpt, {"no_such_key": "1"})


def test_gradcheck_primitives_pass():
    results = hsifuse.gradcheck("primitives", 1e-4)
    assert results
    assert all(r["passed"] for r in results)
