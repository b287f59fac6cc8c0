import numpy as np

from decrec import checkpoint, fm
from decrec.backdoor import BackdoorConfig
from decrec.training import DeconfHead, Model


def test_round_trip_fm(tmp_path):
    params = fm.init_fm(7, 4, seed=3)
    params.w0 = 0.125
    model = Model("fm", params)
    p1 = tmp_path / "a.ckpt"
    checkpoint.save_model(p1, model, {"seed": 3})
    loaded = checkpoint.load_model(p1)
    assert loaded.kind == "fm"
    # stored as float32: loading then saving reproduces the bytes exactly
    p2 = tmp_path / "b.ckpt"
    checkpoint.save_model(p2, loaded, {"seed": 3})
    assert p1.read_bytes() == p2.read_bytes()
    # and values match at float32 precision
    assert np.allclose(loaded.params.E, params.E, atol=1e-6)
    assert loaded.params.w0 == np.float32(0.125)


def test_round_trip_nfm(tmp_path):
    params = fm.init_nfm(5, 3, seed=1, dropout=0.4)
    model = Model("nfm", params)
    p = tmp_path / "n.ckpt"
    checkpoint.save_model(p, model)
    loaded = checkpoint.load_model(p)
    assert isinstance(loaded.params, fm.NFMParams)
    assert loaded.params.dropout == 0.4
    assert np.allclose(loaded.params.W1, params.W1, atol=1e-6)


def test_round_trip_deconfounded(tmp_path):
    params = fm.init_fm(6, 4, seed=2)
    v = np.random.default_rng(0).normal(size=(3, 4))
    dbar = np.array([0.5, 0.3, 0.2])
    model = Model("fm", params, DeconfHead(BackdoorConfig("fm-module", dbar), v, np.zeros_like(v)))
    p = tmp_path / "d.ckpt"
    checkpoint.save_model(p, model)
    loaded = checkpoint.load_model(p)
    assert loaded.deconf is not None
    assert loaded.deconf.config.operator == "fm-module"
    assert np.allclose(loaded.deconf.v, v, atol=1e-6)
    assert abs(loaded.deconf.config.dbar.sum() - 1.0) < 1e-9


def test_header_metadata(tmp_path):
    params = fm.init_fm(4, 2, seed=5)
    p = tmp_path / "m.ckpt"
    checkpoint.save_model(p, Model("fm", params), {"seed": 5, "config": "{}"})
    meta, blocks = checkpoint.load_checkpoint(p)
    assert meta["kind"] == "fm"
    assert meta["dim"] == "2"
    assert meta["seed"] == "5"
    assert set(blocks) == {"w0", "w", "E"}
    assert blocks["E"].shape == (4, 2)


def test_rejects_non_checkpoint(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"not a checkpoint\nend\n")
    try:
        checkpoint.load_checkpoint(p)
        assert False, "should have raised"
    except ValueError:
        pass
