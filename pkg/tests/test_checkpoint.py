import struct

import numpy as np
import pytest

from stpose.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                               restore_params, save_checkpoint)
from stpose.tensor import Tensor


def sample_params(seed=3):
    rng = np.random.default_rng(seed)
    return {
        "embed.w": Tensor(rng.normal(size=(7, 5))),
        "embed.b": Tensor(rng.normal(size=5)),
        "head.w": Tensor(rng.normal(size=(2, 3, 4))),
        "gate": Tensor(rng.normal(size=())),
    }


class TestRoundTrip:
    def test_f8_round_trip_bitwise(self, tmp_path):
        path = tmp_path / "model.ckpt"
        params = sample_params()
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(params)
        for name, tensor in params.items():
            assert loaded[name].dtype == np.float64
            assert np.array_equal(loaded[name], tensor.data)

    def test_f4_round_trip_matches_float32_cast(self, tmp_path):
        path = tmp_path / "model.ckpt"
        params = sample_params()
        save_checkpoint(path, params, dtype="f4")
        loaded = load_checkpoint(path)
        for name, tensor in params.items():
            expect = tensor.data.astype(np.float32).astype(np.float64)
            assert np.array_equal(loaded[name], expect)

    def test_accepts_plain_ndarrays(self, tmp_path):
        path = tmp_path / "arrays.ckpt"
        save_checkpoint(path, {"a": np.arange(6.0).reshape(2, 3)})
        assert np.array_equal(load_checkpoint(path)["a"],
                              np.arange(6.0).reshape(2, 3))

    def test_loaded_arrays_are_writable(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_params())
        loaded = load_checkpoint(path)
        loaded["gate"][...] = 0.0  # must not raise
        assert loaded["gate"] == 0.0

    def test_empty_param_dict(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        save_checkpoint(path, {})
        assert load_checkpoint(path) == {}


class TestLayout:
    def test_header_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_params())
        blob = path.read_bytes()
        assert blob[:8] == MAGIC
        version, count = struct.unpack_from("<II", blob, 8)
        assert version == 1
        assert count == 4

    def test_f4_file_smaller_than_f8(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, sample_params(), dtype="f4")
        save_checkpoint(b, sample_params(), dtype="f8")
        assert a.stat().st_size < b.stat().st_size


class TestErrors:
    def test_bad_dtype_argument(self, tmp_path):
        with pytest.raises(CheckpointError, match="f4"):
            save_checkpoint(tmp_path / "x.ckpt", {}, dtype="f2")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_params())
        blob = bytearray(path.read_bytes())
        blob[8] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 9"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_params())
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_params())
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_unknown_dtype_code(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"x": np.zeros(2)})
        blob = bytearray(path.read_bytes())
        # entry starts after 16 header bytes: u16 name_len, name, dtype u8
        offset = 16 + 2 + 1
        assert blob[offset] == 1
        blob[offset] = 7
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="dtype code 7"):
            load_checkpoint(path)

    def test_overlong_name(self, tmp_path):
        with pytest.raises(CheckpointError, match="name too long"):
            save_checkpoint(tmp_path / "x.ckpt", {"n" * 70000: np.zeros(1)})

    def test_checkpoint_error_is_value_error(self):
        assert issubclass(CheckpointError, ValueError)


class TestRestore:
    def test_restore_copies_bitwise(self, tmp_path):
        path = tmp_path / "model.ckpt"
        source = sample_params(seed=3)
        save_checkpoint(path, source)
        target = sample_params(seed=4)
        restore_params(target, load_checkpoint(path))
        for name in source:
            assert np.array_equal(target[name].data, source[name].data)

    def test_restore_missing_and_extra_names(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"a": np.zeros(2), "b": np.zeros(2)})
        loaded = load_checkpoint(path)
        with pytest.raises(CheckpointError, match=r"missing \['c'\].*'b'"):
            restore_params({"a": Tensor(np.zeros(2)), "c": Tensor(np.zeros(2))},
                           loaded)

    def test_restore_shape_mismatch_names_both_shapes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"a": np.zeros((2, 3))})
        loaded = load_checkpoint(path)
        with pytest.raises(CheckpointError, match=r"\(2, 3\).*\(3, 2\)"):
            restore_params({"a": Tensor(np.zeros((3, 2)))}, loaded)

    def test_restore_does_not_rebind_data_arrays(self, tmp_path):
        path = tmp_path / "model.ckpt"
        source = sample_params(seed=3)
        save_checkpoint(path, source)
        target = sample_params(seed=4)
        views = {name: t.data for name, t in target.items()}
        restore_params(target, load_checkpoint(path))
        for name, tensor in target.items():
            assert tensor.data is views[name]
