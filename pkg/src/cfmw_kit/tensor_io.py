"""TSR1 binary tensor files and plain-text key=value manifests.

TSR1 layout, all little-endian:

    bytes 0..3   magic ``TSR1``
    u32          rank
    rank * u32   extents
    rest         row-major float64 payload

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = [
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
    "write_manifest",
    "read_manifest",
]

MAGIC = b"TSR1"


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        raise ValueError("rank-0 tensors cannot be serialized")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f8", copy=False).tobytes(order="C")


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise ValueError("not a TSR1 tensor: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank == 0:
        raise ValueError("TSR1 rank must be >= 1")
    need = 8 + 4 * rank
    if len(blob) < need:
        raise ValueError("truncated TSR1 header")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(s < 1 for s in shape):
        raise ValueError(f"TSR1 extents must be >= 1, got {shape}")
    count = 1
    for s in shape:
        count *= s
    if len(blob) != need + 8 * count:
        raise ValueError("TSR1 payload size does not match extents")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=need)
    return data.astype(np.float64, copy=True).reshape(shape)


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_manifest(path: str | Path, entries: dict[str, str]) -> None:
    """One ``key=value`` line per entry, in insertion order."""
    lines = []
    for key, value in entries.items():
        key = str(key)
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"manifest entry {key!r} not representable")
        lines.append(f"{key}={value}\n")
    Path(path).write_text("".join(lines), encoding="ascii")


def read_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"manifest line {lineno} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        entries[key] = value
    return entries
