"""Flat binary checkpoint: JSON header, then raw parameter blobs.

Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON header,
then each array's bytes in header order. The header records names, shapes,
dtypes and arbitrary caller metadata, so files are self-describing.
"""

import json
from pathlib import Path

import numpy as np

from polyseq.grad.tensor import Tensor

MAGIC = b"PSEQCKPT"


def save_checkpoint(path, params, meta=None):
    """params: ordered dict of name -> Tensor or ndarray."""
    entries = []
    blobs = []
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name}
        )
        blobs.append(arr.tobytes())  # tobytes always emits C order
    header = json.dumps({"version": 1, "meta": meta or {}, "entries": entries})
    raw = header.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(raw).to_bytes(8, "little"))
        f.write(raw)
        for blob in blobs:
            f.write(blob)
    return Path(path)


def load_checkpoint(path):
    """Returns (dict name -> ndarray, meta dict)."""
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["entries"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = f.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(
                entry["shape"]
            ).copy()
    return arrays, header["meta"]
