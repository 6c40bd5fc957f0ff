"""Named parameter registry and its on-disk format.

A weight file is: 8-byte magic ``b"VDWTS01\\n"``, an 8-byte little-endian
header length, a UTF-8 JSON header (format version, precision, tensor table
with shapes and byte offsets), then the raw row-major little-endian payload.
Round trips are bitwise exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IngestionError, ValidationError

MAGIC = b"VDWTS01\n"
FORMAT_VERSION = 1


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def total_parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all grads in place so their global norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def save_weights(path: str | Path, params: dict[str, np.ndarray]) -> None:
    names = sorted(params)
    table = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=params[name].dtype)
        blob = arr.astype("<" + arr.dtype.str[1:], copy=False).tobytes()
        table.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
            "nbytes": len(blob),
        })
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "precision": "float64" if all(params[n].dtype == np.float64 for n in names) else "mixed",
        "tensors": table,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_weights(
    path: str | Path, expected_names: set[str] | None = None
) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise IngestionError(f"{path}: not a weight file (bad magic)")
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise IngestionError(f"{path}: unsupported format version")
        payload = fh.read()
    params = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start:start + n], dtype="<" + np.dtype(entry["dtype"]).str[1:])
        params[entry["name"]] = arr.reshape(entry["shape"]).copy()
    if expected_names is not None:
        got = set(params)
        if got != expected_names:
            extra = sorted(got - expected_names)
            missing = sorted(expected_names - got)
            raise ValidationError(
                f"{path}: weight names do not match the model registry "
                f"(unexpected: {extra[:5]}, missing: {missing[:5]})"
            )
    return params
