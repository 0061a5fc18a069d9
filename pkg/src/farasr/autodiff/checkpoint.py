"""Checkpoint files: a text header describing named tensors, then a raw
little-endian float32 payload.

Header layout::

    farasr-ckpt 1 <entry-count>
    <name> <d0,d1,...> <dtype> <byte-offset>
    ...
    end

Offsets are into the binary payload that starts right after the ``end``
line.  Values are always written as float32 regardless of the engine's
active precision.
"""

from __future__ import annotations

import numpy as np

MAGIC = "farasr-ckpt"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays):
    """Write a {name: ndarray} dict; iteration order is preserved."""
    header_lines = [f"{MAGIC} {VERSION} {len(arrays)}"]
    payload = bytearray()
    for name, arr in arrays.items():
        if " " in name:
            raise CheckpointError(f"tensor name may not contain spaces: {name!r}")
        a = np.ascontiguousarray(arr, dtype="<f4")
        shape = ",".join(str(d) for d in a.shape) if a.ndim else "1"
        header_lines.append(f"{name} {shape} float32 {len(payload)}")
        payload.extend(a.tobytes())
    header_lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("ascii"))
        fh.write(bytes(payload))


def load_arrays(path):
    """Read a checkpoint back into {name: float32 ndarray}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    first = blob[:nl].decode("ascii", errors="replace").split()
    if len(first) != 3 or first[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic line)")
    if int(first[1]) != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {first[1]}")
    count = int(first[2])
    entries = []
    pos = nl + 1
    for _ in range(count):
        nl = blob.find(b"\n", pos)
        parts = blob[pos:nl].decode("ascii").split()
        if len(parts) != 4:
            raise CheckpointError(f"{path}: malformed header entry {blob[pos:nl]!r}")
        name, shape_s, dtype_s, offset_s = parts
        if dtype_s not in ("float32", "float64"):
            raise CheckpointError(f"{path}: unsupported dtype {dtype_s!r} for {name!r}")
        shape = tuple(int(d) for d in shape_s.split(","))
        entries.append((name, shape, dtype_s, int(offset_s)))
        pos = nl + 1
    nl = blob.find(b"\n", pos)
    if blob[pos:nl] != b"end":
        raise CheckpointError(f"{path}: header not terminated by 'end'")
    payload = blob[nl + 1 :]
    out = {}
    for name, shape, dtype_s, offset in entries:
        dt = np.dtype("<f4") if dtype_s == "float32" else np.dtype("<f8")
        n = int(np.prod(shape)) if shape else 1
        end = offset + n * dt.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: payload too short for entry {name!r}")
        out[name] = np.frombuffer(payload, dtype=dt, count=n, offset=offset).reshape(shape).copy()
    return out
