"""Binary PGM (P5) and PPM (P6) image I/O.

Images live in data space [-1, 1] as float (C, H, W); files store 8-bit
samples with the mapping byte = round(255 * (x + 1) / 2), clipped. One
channel writes P5, three channels writes P6.
"""

import numpy as np

from .errors import ConfigError, RuntimeAbort


def encode_unit(x) -> np.ndarray:
    """[-1, 1] float -> uint8 via round(255 * (x + 1) / 2)."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.rint(255.0 * (x + 1.0) / 2.0).astype(np.uint8)


def decode_unit(b) -> np.ndarray:
    """uint8 -> [-1, 1] float32."""
    return (np.asarray(b, dtype=np.float32) * (2.0 / 255.0) - 1.0).astype(
        np.float32
    )


def write_image(path, x):
    """Write (C, H, W) data-space floats as PGM (C=1) or PPM (C=3)."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ConfigError(f"image must be (1|3, H, W), got {x.shape}")
    c, h, w = x.shape
    data = encode_unit(x)
    magic = b"P5" if c == 1 else b"P6"
    body = data[0] if c == 1 else np.moveaxis(data, 0, -1)  # interleave RGB
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(body).tobytes())


def _read_tokens(f, n):
    """Next n whitespace-separated header tokens, skipping # comments."""
    tokens = []
    while len(tokens) < n:
        ch = f.read(1)
        if not ch:
            raise RuntimeAbort("truncated image header")
        if ch in b" \t\r\n":
            continue
        if ch == b"#":
            while ch and ch != b"\n":
                ch = f.read(1)
            continue
        tok = ch
        while True:
            ch = f.read(1)
            if not ch or ch in b" \t\r\n":
                break
            tok += ch
        tokens.append(tok)
    return tokens


def read_image(path) -> np.ndarray:
    """Read a binary PGM/PPM into (C, H, W) float32 in [-1, 1]."""
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise RuntimeAbort(f"cannot read image {path}: {exc}") from exc
    with f:
        magic = f.read(2)
        if magic not in (b"P5", b"P6"):
            raise RuntimeAbort(f"{path}: not a binary PGM/PPM file")
        w, h, maxval = (int(t) for t in _read_tokens(f, 3))
        if maxval != 255:
            raise RuntimeAbort(f"{path}: only 8-bit images supported")
        channels = 1 if magic == b"P5" else 3
        raw = f.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise RuntimeAbort(f"{path}: truncated pixel data")
    flat = np.frombuffer(raw, dtype=np.uint8)
    if channels == 1:
        img = flat.reshape(1, h, w)
    else:
        img = np.moveaxis(flat.reshape(h, w, 3), -1, 0)
    return decode_unit(img)
