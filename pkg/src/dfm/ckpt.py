"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   8 bytes  b"DFMCKPT1"
    version u32
    step    u64
    digest  32 bytes sha256 of the run config text
    count   u32      number of tensors
    directory, per tensor:
        name_len u16, name utf-8, dtype u8, ndim u8,
        shape ndim*u64, offset u64, nbytes u64
    payload: tensor bytes, each 64-byte aligned, in directory order

The config text itself rides along as a tensor named "__config__" so a
checkpoint is self-describing. Tensors are written in sorted name order
and offsets are deterministic, so identical state produces identical
bytes. Writes go through a temp file + rename.
"""

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import RuntimeAbort

MAGIC = b"DFMCKPT1"
VERSION = 1
ALIGN = 64

_DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("float64"): 2,
    np.dtype("int64"): 3,
    np.dtype("uint8"): 4,
    np.dtype("uint64"): 5,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

CONFIG_KEY = "__config__"


@dataclass
class Checkpoint:
    step: int
    tensors: dict
    config_text: str
    digest: bytes


def config_digest(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode("utf-8")).digest()


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def save(path, step: int, tensors: dict, config_text: str):
    items = dict(tensors)
    if CONFIG_KEY in items:
        raise RuntimeAbort(f"tensor name {CONFIG_KEY!r} is reserved")
    items[CONFIG_KEY] = np.frombuffer(
        config_text.encode("utf-8"), dtype=np.uint8
    ).copy()

    names = sorted(items)
    directory = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(items[name])
        if arr.dtype not in _DTYPE_CODES:
            raise RuntimeAbort(f"unsupported checkpoint dtype {arr.dtype}")
        directory.append((name, arr, offset))
        offset = _align(offset + arr.nbytes)

    head = [MAGIC, struct.pack("<IQ", VERSION, int(step)),
            config_digest(config_text), struct.pack("<I", len(names))]
    for name, arr, off in directory:
        nb = name.encode("utf-8")
        head.append(struct.pack("<H", len(nb)))
        head.append(nb)
        head.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        head.append(struct.pack("<QQ", off, arr.nbytes))
    header = b"".join(head)

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        base = f.tell()
        for name, arr, off in directory:
            f.write(b"\x00" * (base + off - f.tell()))
            f.write(arr.tobytes())
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise RuntimeAbort(f"cannot read checkpoint {path}: {e}") from e

    def take(n, pos):
        if pos + n > len(blob):
            raise RuntimeAbort(f"{path}: truncated checkpoint")
        return blob[pos:pos + n], pos + n

    raw, pos = take(8, 0)
    if raw != MAGIC:
        raise RuntimeAbort(f"{path}: not a checkpoint file")
    raw, pos = take(12, pos)
    version, step = struct.unpack("<IQ", raw)
    if version != VERSION:
        raise RuntimeAbort(f"{path}: unsupported checkpoint version {version}")
    digest, pos = take(32, pos)
    raw, pos = take(4, pos)
    (count,) = struct.unpack("<I", raw)

    entries = []
    for _ in range(count):
        raw, pos = take(2, pos)
        (nlen,) = struct.unpack("<H", raw)
        raw, pos = take(nlen, pos)
        name = raw.decode("utf-8")
        raw, pos = take(2, pos)
        code, ndim = struct.unpack("<BB", raw)
        raw, pos = take(8 * ndim, pos)
        shape = struct.unpack(f"<{ndim}Q", raw)
        raw, pos = take(16, pos)
        off, nbytes = struct.unpack("<QQ", raw)
        if code not in _CODE_DTYPES:
            raise RuntimeAbort(f"{path}: unknown dtype code {code}")
        entries.append((name, _CODE_DTYPES[code], shape, off, nbytes))

    base = pos
    tensors = {}
    for name, dtype, shape, off, nbytes in entries:
        raw, _ = take(nbytes, base + off)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        tensors[name] = arr

    cfg_arr = tensors.pop(CONFIG_KEY, None)
    if cfg_arr is None:
        raise RuntimeAbort(f"{path}: checkpoint lacks embedded config")
    config_text = cfg_arr.tobytes().decode("utf-8")
    if config_digest(config_text) != digest:
        raise RuntimeAbort(f"{path}: config digest mismatch, file corrupt")
    return Checkpoint(step=int(step), tensors=tensors,
                      config_text=config_text, digest=digest)
