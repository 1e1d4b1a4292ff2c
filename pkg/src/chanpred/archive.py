"""Named-tensor weight archive (CPWT) used for checkpoints and weights.

File layout (little-endian):

    magic     4 bytes  "CPWT"
    version   u16      (currently 1)
    records until end of file, each
        name_len  u16
        name      utf-8 bytes
        dtype     u8    (1=float32, 2=float64, 3=complex64,
                         4=complex128, 5=int64)
        rank      u8
        dims      u32 * rank
        payload   row-major little-endian bytes

Names are unique; record order is preserved so rewriting a loaded
archive reproduces the file bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CPWT"
VERSION = 1

_DTYPES = {1: "<f4", 2: "<f8", 3: "<c8", 4: "<c16", 5: "<i8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_archive(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors in insertion order."""
    chunks = [struct.pack("<4sH", MAGIC, VERSION)]
    seen = set()
    for name, arr in tensors.items():
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError("rank too large")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_archive(path) -> dict[str, np.ndarray]:
    """Read an archive back into an ordered name -> array mapping."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6:
        raise ValueError(f"{path}: truncated archive")
    magic, version = struct.unpack_from("<4sH", raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    off = 6
    while off < len(raw):
        if off + 2 > len(raw):
            raise ValueError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        if off + 2 > len(raw):
            raise ValueError(f"{path}: truncated record {name!r}")
        code, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code} for {name!r}")
        if off + 4 * rank > len(raw):
            raise ValueError(f"{path}: truncated dims for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dtype = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if off + nbytes > len(raw):
            raise ValueError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
        off += nbytes
        if name in out:
            raise ValueError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr.reshape(dims)
    return out
