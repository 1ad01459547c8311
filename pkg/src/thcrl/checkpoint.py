"""Checkpoint files: one little-endian binary blob plus a text index.

Layout of a checkpoint directory::

    params.bin   concatenated little-endian arrays, row-major
    params.idx   "# thcrl-params v1" then one line per array:
                 name <TAB> dtype <TAB> comma-separated shape <TAB> byte offset <TAB> byte count
    meta.json    run configuration and view dimensions

Arrays are stored as f32 by default; ``precision="f64"`` keeps doubles so a
float64 run restores bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LoadError

INDEX_HEADER = "# thcrl-params v1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    meta: dict


def write_params(directory, state: dict[str, np.ndarray], precision: str = "f32") -> None:
    if precision not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {precision!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dt = np.dtype(_DTYPES[precision])
    lines = [INDEX_HEADER]
    offset = 0
    with open(directory / "params.bin", "wb") as fh:
        for name, arr in state.items():
            if any(c in name for c in "\t\n"):
                raise ValueError(f"parameter name {name!r} contains a tab or newline")
            raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
            fh.write(raw)
            shape = ",".join(str(s) for s in np.shape(arr))
            lines.append(f"{name}\t{precision}\t{shape}\t{offset}\t{len(raw)}")
            offset += len(raw)
    (directory / "params.idx").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_params(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    idx_path, bin_path = directory / "params.idx", directory / "params.bin"
    for p in (idx_path, bin_path):
        if not p.is_file():
            raise LoadError(f"{p}: checkpoint file not found")
    blob = bin_path.read_bytes()
    lines = idx_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != INDEX_HEADER:
        raise LoadError(f"{idx_path}: missing header {INDEX_HEADER!r}")
    state = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            name, precision, shape_s, off_s, nbytes_s = line.split("\t")
            dt = np.dtype(_DTYPES[precision])
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            off, nbytes = int(off_s), int(nbytes_s)
        except (ValueError, KeyError) as exc:
            raise LoadError(f"{idx_path}:{ln}: malformed index line") from exc
        if off + nbytes > len(blob) or nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise LoadError(f"{idx_path}:{ln}: {name} does not fit the binary blob")
        state[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
    return state


def save_checkpoint(ckpt: Checkpoint, directory, precision: str = "f32") -> None:
    directory = Path(directory)
    write_params(directory, ckpt.state, precision)
    (directory / "meta.json").write_text(json.dumps(ckpt.meta, indent=2), encoding="utf-8")


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"{meta_path}: checkpoint metadata not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return Checkpoint(read_params(directory), meta)
