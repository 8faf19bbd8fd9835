"""On-disk formats shared across modules.

* named-tensor checkpoints: binary, versioned, shape header per tensor,
  row-major 64-bit floats;
* plain matrices: text, ``rows cols`` header then one row per line
  (17 significant digits, lossless for float64);
* flat key=value config files, no nesting.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_CKPT_MAGIC = b"KSNTCKPT"
_CKPT_VERSION = 1


def save_named_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_named_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    version, count = struct.unpack("<II", blob[8:16])
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors


def save_matrix_text(a: np.ndarray, path) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_text(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        r, c = (int(v) for v in lines[0].split())
    except ValueError:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from None
    rows = [line.split() for line in lines[1:] if line.strip()]
    if len(rows) != r or any(len(row) != c for row in rows):
        raise ValueError(f"{path}: expected {r}x{c} entries")
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; keys are unique."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def save_config(config: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.items():
            fh.write(f"{key} = {value}\n")
