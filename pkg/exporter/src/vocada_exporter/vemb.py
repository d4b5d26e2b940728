"""Standalone writer/reader for the VEMB embedding-matrix layout.

Implemented independently of the consumer package on purpose: the bytes
this module writes are the interchange contract, so a second
implementation doubles as a format cross-check. Layout: magic ``VEMB``,
little-endian u32 version (=1), rows, dim, then rows x dim little-endian
float32 row-major, with the ordered key list in ``<file>.keys.json``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VEMB"
VERSION = 1


class VembError(Exception):
    pass


def write_vemb(path: str | Path, keys: list[str], values: np.ndarray) -> None:
    """Unit-normalize rows and write the matrix plus its keys sidecar.

    The payload is staged in memory and written in one pass, so a failed
    export never leaves a partial file behind.
    """
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise VembError(f"expected a 2-d matrix, got shape {values.shape}")
    rows, dim = values.shape
    if rows != len(keys):
        raise VembError(f"{rows} rows but {len(keys)} keys")
    if len(set(keys)) != len(keys):
        raise VembError("duplicate keys")
    if rows:
        norms = np.linalg.norm(values, axis=1)
        if np.any(norms < 1e-8):
            raise VembError("zero-norm row cannot be normalized")
        values = values / norms[:, None]
    blob = MAGIC + struct.pack("<III", VERSION, rows, dim)
    blob += values.astype("<f4").tobytes(order="C")
    path.write_bytes(blob)
    Path(str(path) + ".keys.json").write_text(
        json.dumps(list(keys), ensure_ascii=False) + "\n", encoding="utf-8"
    )


def read_vemb(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise VembError(f"{path}: not a VEMB file")
    version, rows, dim = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise VembError(f"{path}: unsupported version {version}")
    expected = 16 + rows * dim * 4
    if len(blob) != expected:
        raise VembError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, dim).astype(np.float64)
    keys = json.loads(Path(str(path) + ".keys.json").read_text(encoding="utf-8"))
    if len(keys) != rows:
        raise VembError(f"{path}: sidecar lists {len(keys)} keys for {rows} rows")
    return [str(k) for k in keys], values
