import numpy as np
import pytest

from dfm.errors import ConfigError, RuntimeAbort
from dfm import imageio as iio


def test_encode_mapping_endpoints():
    assert iio.encode_unit(np.array([-1.0])) == 0
    assert iio.encode_unit(np.array([1.0])) == 255
    assert iio.encode_unit(np.array([5.0])) == 255  # clipped
    assert iio.encode_unit(np.array([-5.0])) == 0
    # 0 maps to 127.5 which rounds to even
    assert iio.encode_unit(np.array([0.0])) == 128


def test_decode_mapping_endpoints():
    v = iio.decode_unit(np.array([0, 255], dtype=np.uint8))
    assert v[0] == pytest.approx(-1.0)
    assert v[1] == pytest.approx(1.0)
    assert v.dtype == np.float32


def test_pgm_roundtrip(tmp_path, rng):
    x = np.clip(rng.standard_normal((1, 5, 7)), -1, 1)
    p = tmp_path / "a.pgm"
    iio.write_image(p, x)
    y = iio.read_image(p)
    assert y.shape == (1, 5, 7)
    assert np.abs(y - x).max() <= 1.0 / 255.0 + 1e-7
    # quantization is a fixpoint: a second write/read changes nothing
    p2 = tmp_path / "b.pgm"
    iio.write_image(p2, y)
    assert iio.read_image(p2) is not None
    assert np.array_equal(iio.read_image(p2), y)


def test_ppm_roundtrip_interleaving(tmp_path):
    x = np.zeros((3, 1, 2), dtype=np.float64)
    x[0, 0, 0] = 1.0  # red in pixel 0
    x[2, 0, 1] = 1.0  # blue in pixel 1
    p = tmp_path / "c.ppm"
    iio.write_image(p, x)
    raw = p.read_bytes()
    assert raw.startswith(b"P6\n2 1\n255\n")
    assert raw[-6:] == bytes([255, 128, 128, 128, 128, 255])
    y = iio.read_image(p)
    assert y.shape == (3, 1, 2)
    assert y[0, 0, 0] == pytest.approx(1.0)
    assert y[2, 0, 1] == pytest.approx(1.0)


def test_header_comments_and_whitespace(tmp_path):
    body = bytes([0, 255, 128, 64])
    p = tmp_path / "d.pgm"
    p.write_bytes(b"P5\n# a comment\n 2\t2 # trailing\n255\n" + body)
    y = iio.read_image(p)
    assert y.shape == (1, 2, 2)
    assert y[0, 0, 0] == pytest.approx(-1.0)


def test_read_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n....")
    with pytest.raises(RuntimeAbort):
        iio.read_image(p)
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(RuntimeAbort):
        iio.read_image(p)
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(2))  # truncated
    with pytest.raises(RuntimeAbort):
        iio.read_image(p)
    p.write_bytes(b"P5\n2")  # truncated header
    with pytest.raises(RuntimeAbort):
        iio.read_image(p)


def test_write_rejects_bad_shapes(tmp_path, rng):
    with pytest.raises(ConfigError):
        iio.write_image(tmp_path / "x.pgm", rng.standard_normal((2, 4, 4)))
    with pytest.raises(ConfigError):
        iio.write_image(tmp_path / "x.pgm", rng.standard_normal((4, 4)))
