import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from flowpalm import io


def test_png_endpoints_and_midpoint(tmp_path):
    path = tmp_path / "g.png"
    Image.fromarray(np.array([[0, 128, 255]], np.uint8), mode="L").save(path)
    vals = io.read_png(path)
    assert vals[0, 0] == -1.0 and vals[0, 2] == 1.0
    assert vals[0, 1] == pytest.approx(2 * 128 / 255 - 1)
    assert vals[0, 1] == pytest.approx(0.00392, abs=1e-5)


def test_png_rejects_colour(tmp_path):
    path = tmp_path / "c.png"
    Image.new("RGB", (4, 4)).save(path)
    with pytest.raises(io.PngFormatError):
        io.read_png(path)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(-1, 1, allow_nan=False, width=64)))
def test_png_round_trip_within_one_level(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("png") / "x.png"
    io.write_png(img, path)
    back = io.read_png(path)
    assert np.max(np.abs(back - img)) <= 1 / 255 + 1e-12


def test_flo_byte_count_for_two_by_two():
    flow = np.empty((2, 2, 2), np.float32)
    flow[..., 0], flow[..., 1] = 1.5, -0.5
    buf = io.encode_flo(flow)
    assert len(buf) == 44
    assert buf[:4] == b"PIEH"
    assert struct.unpack("<ii", buf[4:12]) == (2, 2)


flo_fields = arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(2)),
                    elements=st.floats(-1e6, 1e6, allow_nan=False, width=32))


@settings(max_examples=50, deadline=None)
@given(flo_fields)
def test_flo_round_trip_bit_exact(flow):
    back = io.decode_flo(io.encode_flo(flow))
    assert back.tobytes() == flow.tobytes()


def test_flo_file_round_trip(tmp_path):
    flow = np.random.default_rng(1).normal(size=(5, 7, 2)).astype(np.float32)
    io.write_flo(flow, tmp_path / "f.flo")
    assert io.read_flo(tmp_path / "f.flo").tobytes() == flow.tobytes()


def test_flo_errors():
    good = io.encode_flo(np.zeros((3, 3, 2), np.float32))
    with pytest.raises(io.FloMagicError):
        io.decode_flo(struct.pack("<f", 0.0) + good[4:])
    with pytest.raises(io.FloTruncatedError):
        io.decode_flo(good[:-4])
    with pytest.raises(io.FloFormatError):
        io.decode_flo(good + b"\0")
    bad = bytearray(good)
    bad[12:16] = struct.pack("<f", float("nan"))
    with pytest.raises(io.FloNonFiniteError):
        io.decode_flo(bytes(bad))


def test_noise_container_round_trip(tmp_path):
    z = np.random.default_rng(2).normal(size=(4, 6)) * 3
    io.write_noise(z, tmp_path / "n.noise")
    back = io.read_noise(tmp_path / "n.noise")
    np.testing.assert_array_equal(back, z.astype(np.float32))
