"""Length-prefixed named-tensor checkpoint blobs (magic "VEOCKPT")."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VEOCKPT"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1,
                np.dtype("<i8"): 2, np.dtype("u1"): 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, arrays: dict):
    """Write {name: ndarray} in file order sorted by name."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            dt = arr.dtype.newbyteorder("<")
            if np.dtype(dt) not in _DTYPE_CODES:
                raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _DTYPE_CODES[np.dtype(dt)], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(dt).tobytes())


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:7] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:7]!r}")
    if len(raw) < 11:
        raise CheckpointFormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 7)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    arrays = {}
    off = 11
    while off < len(raw):
        try:
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            code, rank = struct.unpack_from("<BB", raw, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
        except struct.error:
            raise CheckpointFormatError(f"{path}: truncated entry header")
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(raw):
            raise CheckpointFormatError(
                f"{path}: truncated payload for {name}, "
                f"need {nbytes} bytes, have {len(raw) - off}")
        arrays[name] = np.frombuffer(raw, dt, int(np.prod(dims, dtype=np.int64)),
                                     off).reshape(dims).copy()
        off += nbytes
    return arrays
