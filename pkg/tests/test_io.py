from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pqdt.harness.io import (PointFileError, decode_bin, decode_xyz, encode_bin, encode_xyz, pc_io,
                             read_pc, write_pc)

DATA = Path(__file__).parent / "data"
GOLDEN = np.array([[1.0, 0.0, 0.0], [0.0, -2.0, 0.5], [0.25, 1.5, -1.0]])


def test_golden_bin_bytes(tmp_path):
    golden = (DATA / "golden3.bin").read_bytes()
    # hand-laid: "PQPC", count 3, then nine little-endian float32 values
    assert golden[:8].hex() == "5051504303000000"
    assert golden[8:20].hex() == "0000803f" "00000000" "00000000"
    out = tmp_path / "g.bin"
    write_pc(out, GOLDEN)
    assert out.read_bytes() == golden
    np.testing.assert_array_equal(read_pc(DATA / "golden3.bin"), GOLDEN)


def test_golden_xyz_bytes(tmp_path):
    out = tmp_path / "g.xyz"
    pc_io(out, "write", points=GOLDEN)
    assert out.read_bytes() == (DATA / "golden3.xyz").read_bytes()
    np.testing.assert_array_equal(pc_io(DATA / "golden3.xyz", "read"), GOLDEN)


@given(arrays(np.float32, st.tuples(st.integers(1, 50), st.just(3)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_bin_round_trip_f32(pts):
    back = decode_bin(encode_bin(pts))
    np.testing.assert_array_equal(back, pts.astype(np.float64))


@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=st.floats(-1e9, 1e9)))
def test_xyz_round_trip_exact(pts):
    np.testing.assert_array_equal(decode_xyz(encode_xyz(pts)), pts)


def test_bin_precision_is_32_bit():
    x = np.array([[0.1, 1 / 3, np.pi]])
    np.testing.assert_array_equal(decode_bin(encode_bin(x)), x.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize("buf,match", [
    (b"", "empty file at byte 0"),
    (b"PQP", "truncated header"),
    (b"XXXX\x01\x00\x00\x00" + bytes(12), "bad magic"),
    (b"PQPC\x00\x00\x00\x00", "count 0 at byte 4"),
    (b"PQPC\x02\x00\x00\x00" + bytes(12), "ends at byte 20"),
    (b"PQPC\x01\x00\x00\x00" + bytes(13), "trailing bytes at byte 20"),
])
def test_bin_errors_name_offsets(buf, match):
    with pytest.raises(PointFileError, match=match):
        decode_bin(buf)


@pytest.mark.parametrize("buf,match", [
    (b"", "empty file"),
    (b"   \n", "empty file"),
    (b"1 2 3\n4 5\n", "found 2 at byte 6"),
    (b"1 2 3\n1 x 3\n", "non-numeric value at byte 6"),
    (b"1 2 nan\n", "non-finite"),
])
def test_xyz_errors(buf, match):
    with pytest.raises(PointFileError, match=match):
        decode_xyz(buf)


def test_empty_file_on_disk_is_error(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    with pytest.raises(PointFileError, match="e.bin"):
        read_pc(p)


def test_unknown_format_and_mode(tmp_path):
    with pytest.raises(ValueError, match="format"):
        write_pc(tmp_path / "x.ply", GOLDEN)
    with pytest.raises(ValueError, match="mode"):
        pc_io(tmp_path / "x.xyz", "append")
    with pytest.raises(ValueError, match="points"):
        pc_io(tmp_path / "x.xyz", "write")
    write_pc(tmp_path / "x.dat", GOLDEN, "bin")
    np.testing.assert_array_equal(read_pc(tmp_path / "x.dat", "bin"), GOLDEN)
