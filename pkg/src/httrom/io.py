"""Bit-stable on-disk formats for dense tensors, trains and decompositions.

Dense tensor file::

    magic b"HTTv1" | element tag b"<f8" | uint32 order | order * uint64 shape
    | raw little-endian float64 payload, first index fastest

Tensor-train file::

    magic b"HTTv1-TT" | element tag b"<f8" | uint32 D | D * uint64 mode sizes
    | (D+1) * uint64 ranks | core payloads in order, each first index fastest

A decomposition is a directory holding ``metadata.json`` (sorted keys),
``factor_<i>.bin`` dense files and ``components.bin``, the concatenation of
the per-component train records in component order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .htt import HTTDecomposition
from .tt import TTTensor

__all__ = [
    "save_dense",
    "load_dense",
    "save_tt",
    "load_tt",
    "save_htt",
    "load_htt",
]

MAGIC_DENSE = b"HTTv1"
MAGIC_TT = b"HTTv1-TT"
ELEMENT_TAG = b"<f8"


def _write_payload(f: BinaryIO, arr: np.ndarray) -> None:
    f.write(np.asarray(arr, dtype="<f8").ravel(order="F").tobytes())


def _read_payload(f: BinaryIO, shape) -> np.ndarray:
    count = int(np.prod(shape)) if len(shape) else 1
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated payload")
    return np.frombuffer(raw, dtype="<f8").reshape(shape, order="F").copy()


def save_dense(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(MAGIC_DENSE)
        f.write(ELEMENT_TAG)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        _write_payload(f, arr)


def load_dense(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(len(MAGIC_DENSE)) != MAGIC_DENSE:
            raise ValueError(f"{path} is not a dense tensor file")
        if f.read(len(ELEMENT_TAG)) != ELEMENT_TAG:
            raise ValueError(f"{path} has an unsupported element type")
        (order,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{order}Q", f.read(8 * order))
        return _read_payload(f, shape)


def _write_tt(f: BinaryIO, t: TTTensor) -> None:
    f.write(MAGIC_TT)
    f.write(ELEMENT_TAG)
    d = t.order
    f.write(struct.pack("<I", d))
    f.write(struct.pack(f"<{d}Q", *t.mode_sizes))
    f.write(struct.pack(f"<{d + 1}Q", *t.ranks))
    for core in t.cores:
        _write_payload(f, core)


def _read_tt(f: BinaryIO) -> TTTensor:
    if f.read(len(MAGIC_TT)) != MAGIC_TT:
        raise ValueError("not a tensor-train record")
    if f.read(len(ELEMENT_TAG)) != ELEMENT_TAG:
        raise ValueError("unsupported element type in tensor-train record")
    (d,) = struct.unpack("<I", f.read(4))
    sizes = struct.unpack(f"<{d}Q", f.read(8 * d))
    ranks = struct.unpack(f"<{d + 1}Q", f.read(8 * (d + 1)))
    cores = [
        _read_payload(f, (ranks[k], sizes[k], ranks[k + 1])) for k in range(d)
    ]
    return TTTensor(cores)


def save_tt(path, t: TTTensor) -> None:
    with open(path, "wb") as f:
        _write_tt(f, t)


def load_tt(path) -> TTTensor:
    with open(path, "rb") as f:
        return _read_tt(f)


def save_htt(directory, h: HTTDecomposition) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "HTTv1-HTT",
        "c": h.n_sliced_modes,
        "d": h.n_sampled_modes,
        "slice_shape": list(h.slice_shape),
        "param_sizes": list(h.param_sizes),
        "c_ranks": list(h.c_ranks),
        "component_d_ranks": [list(t.ranks) for t in h.components],
        "extra": _json_safe(h.meta),
    }
    with open(directory / "metadata.json", "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")
    for i, factor in enumerate(h.factors):
        save_dense(directory / f"factor_{i}.bin", factor)
    with open(directory / "components.bin", "wb") as f:
        for t in h.components:
            _write_tt(f, t)


def load_htt(directory) -> HTTDecomposition:
    directory = Path(directory)
    meta_path = directory / "metadata.json"
    if not meta_path.is_file():
        raise ValueError(f"{directory} does not contain metadata.json")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format") != "HTTv1-HTT":
        raise ValueError(f"{directory} is not a decomposition directory")
    factors = [
        load_dense(directory / f"factor_{i}.bin") for i in range(int(meta["c"]))
    ]
    c_ranks = tuple(int(q) for q in meta["c_ranks"])
    n_components = 1
    for q in c_ranks:
        n_components *= q
    components = []
    with open(directory / "components.bin", "rb") as f:
        for _ in range(n_components):
            components.append(_read_tt(f))
    return HTTDecomposition(
        factors=factors,
        components=components,
        c_ranks=c_ranks,
        param_sizes=tuple(int(n) for n in meta["param_sizes"]),
        meta=meta.get("extra", {}),
    )


def _json_safe(value):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value
