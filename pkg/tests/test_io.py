import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformreg import io as dio
from deformreg.config import ArchConfig
from deformreg.network import init_params
from deformreg.volume import DisplacementField, Volume


def test_volume_round_trip(tmp_path, rng):
    v = Volume(rng.normal(size=(5, 4, 3)))
    path = tmp_path / "v.dwv"
    dio.write_volume(path, v)
    back = dio.read_volume(path)
    assert isinstance(back, Volume) and back.kind == "intensity"
    np.testing.assert_array_equal(back.data, v.data.astype(np.float32))


def test_label_round_trip_is_exact(tmp_path, rng):
    lab = Volume.labels(rng.integers(0, 60, size=(4, 4, 4)))
    dio.write_volume(tmp_path / "l.dwv", lab)
    back = dio.read_volume(tmp_path / "l.dwv")
    assert back.kind == "label"
    np.testing.assert_array_equal(back.data, lab.data)


def test_field_round_trip(tmp_path, rng):
    d = DisplacementField(rng.normal(size=(3, 4, 5, 6)))
    dio.write_volume(tmp_path / "d.dwv", d)
    back = dio.read_volume(tmp_path / "d.dwv")
    assert isinstance(back, DisplacementField)
    for c in range(3):
        np.testing.assert_array_equal(back.data[c], d.data[c].astype(np.float32))


def test_byte_layout():
    data = np.arange(6.0).reshape(3, 2, 1)
    buf = dio.encode_volume(Volume(data))
    assert buf[:4] == b"DWV1"
    assert buf[4] == 0 and buf[5] == 4
    assert struct.unpack_from("<3I", buf, 6) == (3, 2, 1)
    payload = buf[18:-4]
    # u varies fastest
    assert np.frombuffer(payload, "<f4").tolist() == [0.0, 2.0, 4.0, 1.0, 3.0, 5.0]
    assert struct.unpack("<I", buf[-4:])[0] == zlib.crc32(payload)


def test_field_components_interleaved():
    d = np.zeros((3, 2, 1, 1))
    d[0] = [[[1.0]], [[2.0]]]
    d[1] = 10 * d[0]
    d[2] = 100 * d[0]
    buf = dio.encode_volume(DisplacementField(d))
    assert buf[4] == 2
    assert np.frombuffer(buf[18:-4], "<f4").tolist() == [1.0, 10.0, 100.0, 2.0, 20.0, 200.0]


def test_distinct_errors(rng):
    good = dio.encode_volume(Volume(rng.normal(size=(3, 3, 3))))
    with pytest.raises(dio.BadMagic):
        dio.decode_volume(b"XXXX" + good[4:])
    with pytest.raises(dio.Truncated):
        dio.decode_volume(good[:-7])
    with pytest.raises(dio.Truncated):
        dio.decode_volume(good[:10])
    corrupt = bytearray(good)
    corrupt[20] ^= 0xFF
    with pytest.raises(dio.ChecksumMismatch):
        dio.decode_volume(bytes(corrupt))
    huge = bytearray(good)
    struct.pack_into("<3I", huge, 6, 2**31, 2**31, 2)
    with pytest.raises(dio.DimOverflow):
        dio.decode_volume(bytes(huge))


@settings(max_examples=50)
@given(st.binary(max_size=64))
def test_garbage_never_crashes(blob):
    with pytest.raises(dio.FormatError):
        dio.decode_volume(blob)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_any_truncation_is_reported(seed, cut):
    v = Volume(np.random.default_rng(seed).normal(size=(4, 4, 4)))
    buf = dio.encode_volume(v)
    with pytest.raises(dio.FormatError):
        dio.decode_volume(buf[: max(0, len(buf) - cut)])


def test_checkpoint_round_trip(tmp_path):
    arch = ArchConfig(c=2, k=1, depth=2, additive_forwarding=False)
    p = init_params(arch, 5)
    dio.save_checkpoint(tmp_path / "m.ckpt", p)
    back = dio.load_checkpoint(tmp_path / "m.ckpt")
    assert back.arch == arch
    assert list(back.tensors) == list(p.tensors)
    for k in p.tensors:
        assert np.array_equal(back.tensors[k], p.tensors[k])


def test_checkpoint_errors():
    buf = dio.encode_checkpoint(init_params(ArchConfig(c=1, k=1, depth=1), 0))
    with pytest.raises(dio.BadMagic):
        dio.decode_checkpoint(b"NOPE" + buf[4:])
    corrupt = bytearray(buf)
    corrupt[-10] ^= 1
    with pytest.raises(dio.ChecksumMismatch):
        dio.decode_checkpoint(bytes(corrupt))
    with pytest.raises(dio.FormatError):
        dio.decode_checkpoint(buf[:-20])


def test_atomic_write_leaves_no_temp(tmp_path):
    dio.atomic_write_text(tmp_path / "a.txt", "one")
    dio.atomic_write_text(tmp_path / "a.txt", "two")
    assert (tmp_path / "a.txt").read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


def test_metrics_csv():
    text = dio.metrics_csv([("p0", "GLOBAL", "ncc", 0.5), ("p0", 3, "dice", 1)])
    assert text.splitlines() == ["pair_id,label_id,metric,value", "p0,GLOBAL,ncc,0.5", "p0,3,dice,1.0"]
