"""Binary parameter checkpoints.

Layout (little-endian): magic ``RBCK``, u32 version, u32 tensor count; then per
tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims, float64 data.
"""

import struct

import numpy as np

MAGIC = b"RBCK"
VERSION = 1


def dumps(params) -> bytes:
    """Serialize a ``{name: array or Tensor}`` mapping, in insertion order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint blob")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos, params = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        size = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * size
    if pos != len(blob):
        raise ValueError("trailing bytes after checkpoint")
    return params


def save(params, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
