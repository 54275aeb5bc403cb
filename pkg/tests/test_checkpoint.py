import numpy as np
import pytest

from restyle.autodiff import parameter
from restyle.checkpoint import (
    config_hash,
    load_checkpoint,
    params_hash,
    restore_params,
    save_checkpoint,
)


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    return {"emb": parameter(rng.normal(size=(4, 3))),
            "out.w": parameter(rng.normal(size=(3, 2))),
            "out.b": parameter(np.zeros(2))}


class TestCheckpoint:
    def test_roundtrip(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"seed": 7, "config_hash": "abc"})
        header, arrays = load_checkpoint(path)
        assert header == {"seed": 7, "config_hash": "abc"}
        for name, p in params.items():
            np.testing.assert_array_equal(arrays[name], p.values)

    def test_byte_stable_across_saves(self, params, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, params, {"seed": 1})
        save_checkpoint(b, params, {"seed": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_restore_into_model(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        fresh = {name: parameter(np.zeros_like(p.values)) for name, p in params.items()}
        _, arrays = load_checkpoint(path)
        restore_params(fresh, arrays)
        for name in params:
            np.testing.assert_array_equal(fresh[name].values, params[name].values)

    def test_mismatched_names_rejected(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        _, arrays = load_checkpoint(path)
        with pytest.raises(ValueError, match="mismatch"):
            restore_params({"other": parameter(np.zeros(2))}, arrays)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_params_hash_orders_by_name(self, params):
        h1 = params_hash(params)
        h2 = params_hash(dict(reversed(list(params.items()))))
        assert h1 == h2

    def test_config_hash_stable_under_key_order(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
