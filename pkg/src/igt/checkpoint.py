"""Binary parameter checkpoints.

Layout: magic ``IGT1``, one element-type byte (4 = float32, 8 = float64),
then for each parameter in model order: name length (u16 little-endian),
UTF-8 name, rows (u32 LE), cols (u32 LE), row-major little-endian values.
Optimizer state is never included; resuming starts with fresh moments.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"IGT1"
_ELEM_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Write named parameter arrays; element type taken from the arrays."""
    arrays = {name: np.ascontiguousarray(a) for name, a in params.items()}
    itemsizes = {a.dtype.itemsize for a in arrays.values()}
    if len(itemsizes) > 1:
        raise CheckpointError(f"mixed element sizes in checkpoint: {sorted(itemsizes)}")
    code = itemsizes.pop() if itemsizes else 8
    if code not in _ELEM_CODES:
        raise CheckpointError(f"unsupported element size {code}")
    dtype = _ELEM_CODES[code]

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", code))
        for name, a in arrays.items():
            if a.ndim != 2:
                raise CheckpointError(f"parameter {name!r} is not 2-D")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<II", a.shape[0], a.shape[1]))
            f.write(a.astype(dtype, copy=False).tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> array (native byte order)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 5:
        raise CheckpointError(f"{path}: truncated header at offset {len(blob)}")
    code = blob[4]
    if code not in _ELEM_CODES:
        raise CheckpointError(f"{path}: unknown element-type code {code}")
    dtype = _ELEM_CODES[code]

    params: dict[str, np.ndarray] = {}
    offset = 5
    while offset < len(blob):
        if offset + 2 > len(blob):
            raise CheckpointError(f"{path}: truncated name length at offset {offset}")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + name_len + 8 > len(blob):
            raise CheckpointError(f"{path}: truncated record header at offset {offset}")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        nbytes = rows * cols * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(
                f"{path}: parameter {name!r} needs {nbytes} bytes at offset {offset}, "
                f"only {len(blob) - offset} remain")
        flat = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=offset)
        params[name] = flat.reshape(rows, cols).astype(dtype.newbyteorder("="), copy=True)
        offset += nbytes
    return params


def load_into_model(path: str | Path, model) -> None:
    """Load a checkpoint into a model, verifying names and shapes."""
    loaded = load_checkpoint(path)
    own = model.parameters()
    missing = sorted(set(own) - set(loaded))
    unexpected = sorted(set(loaded) - set(own))
    bad_shape = sorted(name for name in set(own) & set(loaded)
                       if own[name].shape != loaded[name].shape)
    if missing or unexpected or bad_shape:
        raise CheckpointError(
            f"{path}: checkpoint does not match model "
            f"(missing={missing}, unexpected={unexpected}, shape-mismatch={bad_shape})")
    for name, p in own.items():
        p.data[...] = loaded[name].astype(p.data.dtype)
