import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualspec import io
from dualspec.errors import ConfigError, FormatError
from dualspec.network import NetConfig, init_params


def test_hsc_header_and_index_order(tmp_path):
    cube = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    path = tmp_path / "c.hsc"
    io.write_hsc(path, cube)
    blob = path.read_bytes()
    assert blob[:4] == b"HSC1"
    assert struct.unpack("<3I", blob[4:16]) == (2, 3, 4)
    assert len(blob) == 16 + 4 * 24
    values = struct.unpack("<24f", blob[16:])
    h, w, c = 1, 2, 3
    assert values[(h * 3 + w) * 4 + c] == cube[h, w, c]


def test_hsc_two_dimensional_is_single_channel(tmp_path):
    io.write_hsc(tmp_path / "m.hsc", np.ones((3, 5)))
    assert io.read_hsc(tmp_path / "m.hsc").shape == (3, 5, 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)), elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_hsc_round_trip_exact(cube):
    back = io.decode_hsc(io.encode_hsc(cube))
    np.testing.assert_array_equal(back.astype(np.float32), cube)


def test_hsc_bad_magic():
    blob = bytearray(io.encode_hsc(np.zeros((1, 1, 1))))
    blob[0:4] = b"XSC1"
    with pytest.raises(FormatError, match="bad magic"):
        io.decode_hsc(bytes(blob))


def test_hsc_truncated_payload():
    with pytest.raises(FormatError):
        io.decode_hsc(io.encode_hsc(np.zeros((2, 2, 2)))[:-1])


def test_hsc_missing_file(tmp_path):
    with pytest.raises(FormatError):
        io.read_hsc(tmp_path / "nope.hsc")


def test_hsc_rejects_bad_rank():
    with pytest.raises(ConfigError):
        io.encode_hsc(np.zeros((1, 1, 1, 1)))


# ---------------------------------------------------------------- checkpoints


def desk_doc():
    return io.checkpoint_document(NetConfig.desk(), 2.0, 0.7, 3, 0)


def test_checkpoint_layout():
    ps = init_params(NetConfig.desk(), seed=1)
    blob = io.encode_checkpoint(ps, desk_doc())
    assert blob[:4] == b"HDN1"
    (n,) = struct.unpack("<I", blob[4:8])
    assert len(blob) == 8 + n + 4 * ps.num_elements()
    assert b'"lambda": 0.7' in blob[8 : 8 + n]


def test_checkpoint_round_trip():
    ps = init_params(NetConfig.desk(), seed=1)
    net, back, doc = io.decode_checkpoint(io.encode_checkpoint(ps, desk_doc()))
    assert net == NetConfig.desk()
    assert list(back) == list(ps)
    np.testing.assert_array_equal(back.flatten(), ps.flatten().astype(np.float32))
    assert list(doc) == list(io.CKPT_KEYS)


def test_checkpoint_round_trip_is_fixed_point():
    ps = init_params(NetConfig.desk(), seed=1)
    once = io.encode_checkpoint(ps, desk_doc())
    _, back, doc = io.decode_checkpoint(once)
    assert io.encode_checkpoint(back, doc) == once


def test_checkpoint_count_mismatch():
    ps = init_params(NetConfig.desk(), seed=1)
    blob = io.encode_checkpoint(ps, desk_doc())
    with pytest.raises(FormatError):
        io.decode_checkpoint(blob[:-4])
    other = io.checkpoint_document(NetConfig(channels=8, blocks_pre=2, blocks_post=1, groups=2, in_channels=4), 2.0, 0.7, 3, 0)
    with pytest.raises(FormatError):
        io.decode_checkpoint(io.encode_checkpoint(ps, other))


def test_checkpoint_bad_magic():
    with pytest.raises(FormatError, match="bad magic"):
        io.decode_checkpoint(b"HSC1" + bytes(8))


def test_checkpoint_garbage_config():
    with pytest.raises(FormatError):
        io.decode_checkpoint(b"HDN1" + struct.pack("<I", 3) + b"{x}")


def test_checkpoint_missing_keys():
    with pytest.raises(ConfigError):
        io.encode_checkpoint(init_params(NetConfig.desk()), {"channels": 8})


# ---------------------------------------------------------------- PGM, CSV, JSON


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    io.write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_rejects_float(tmp_path):
    with pytest.raises(ConfigError):
        io.write_pgm(tmp_path / "a.pgm", np.zeros((2, 2)))


def test_csv_round_trip(tmp_path):
    rows = [{"step": 0, "l1": 0.1, "fdl": 1 / 3, "total": 0.1 + 0.7 / 3, "lr": 4e-4}]
    io.write_log_csv(tmp_path / "log.csv", rows)
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "step,l1,fdl,total,lr"
    assert io.read_log_csv(tmp_path / "log.csv") == rows


def test_json_errors(tmp_path):
    (tmp_path / "a.json").write_text("[1, 2]")
    (tmp_path / "b.json").write_text("{nope")
    for name in ("a.json", "b.json", "c.json"):
        with pytest.raises(FormatError):
            io.read_json(tmp_path / name)
