import numpy as np
import pytest

from daftir.container import MAGIC, read_container, write_container
from daftir.errors import DataFormatError


def test_round_trip_and_alignment(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5.0), "c": np.zeros((0, 2))}
    write_container(tmp_path / "x.bin", "thing", 2, {"note": "hi"}, arrays)
    manifest, back = read_container(tmp_path / "x.bin", "thing")
    assert manifest["version"] == 2 and manifest["meta"] == {"note": "hi"}
    for k, v in arrays.items():
        assert back[k].shape == v.shape and np.array_equal(back[k], v)
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[:8] == MAGIC and int.from_bytes(raw[8:16], "little") % 8 == 0


def test_identical_content_identical_bytes(tmp_path, rng):
    arrays = {"w": rng.normal(size=7)}
    write_container(tmp_path / "1.bin", "k", 1, {"b": 1, "a": 2}, arrays)
    write_container(tmp_path / "2.bin", "k", 1, {"a": 2, "b": 1}, arrays)
    assert (tmp_path / "1.bin").read_bytes() == (tmp_path / "2.bin").read_bytes()


def test_blocks_are_little_endian_float64(tmp_path):
    write_container(tmp_path / "x.bin", "k", 1, {}, {"v": np.array([1.5, -2.0])})
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[-16:] == np.array([1.5, -2.0], dtype="<f8").tobytes()


def test_errors(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"not a container")
    with pytest.raises(DataFormatError):
        read_container(tmp_path / "junk.bin")
    write_container(tmp_path / "x.bin", "index", 1, {}, {"v": np.ones(4)})
    with pytest.raises(DataFormatError):
        read_container(tmp_path / "x.bin", "checkpoint")
    (tmp_path / "short.bin").write_bytes((tmp_path / "x.bin").read_bytes()[:-8])
    with pytest.raises(DataFormatError):
        read_container(tmp_path / "short.bin")
    with pytest.raises(ValueError):
        write_container(tmp_path / "nan.bin", "k", 1, {}, {"v": np.array([np.nan])})
