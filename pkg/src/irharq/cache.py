"""Binary cache for DP layer tables.

A file holds one layer: a fixed header (magic, format version, round index,
spec and grid digests, axis sizes), the three axes, then one packed record
per stored state with its key, energy, round decision and back-pointer.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dp import LayerTable, StateGrid, _empty_layer
from .model import HarqError, ProblemSpec

MAGIC = b"IRHQLAYR"
VERSION = 1
_HEADER = struct.Struct("<8sHH32s32sIII")

RECORD = np.dtype(
    [
        ("i", "<i4"),
        ("j", "<i4"),
        ("k", "<i4"),
        ("energy", "<f8"),
        ("blocklength", "<i8"),
        ("power", "<f8"),
        ("pred", "<i4", (3,)),
        ("first_blocklength", "<i8"),
        ("first_power", "<f8"),
    ]
)


class CacheMismatchError(HarqError):
    """The cache file was written for another format, spec or grid."""


def _digest(payload: dict) -> bytes:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).digest()


def spec_digest(spec: ProblemSpec) -> bytes:
    """Layers depend on the payload, target, n_min and delay, not on M or N."""
    d = spec.to_dict()
    return _digest({k: d[k] for k in ("B_bits", "T_rel", "delay", "n_min")})


def grid_digest(grid: StateGrid) -> bytes:
    return _digest(
        {
            "theta_V": repr(grid.theta_V),
            "theta_c": repr(grid.theta_c),
            "n_step": grid.n_step,
            "n_min": grid.n_min,
            "n_max": grid.n_max,
            "c_final": repr(grid.c_final),
        }
    )


def cache_path(directory, spec: ProblemSpec, grid: StateGrid, m: int) -> Path:
    tag = (spec_digest(spec) + grid_digest(grid)).hex()[:24]
    return Path(directory) / f"layer-{tag}-m{m}.bin"


def dump_layer(layer: LayerTable, path, spec: ProblemSpec, grid: StateGrid) -> None:
    present = np.argwhere(layer.present)
    rec = np.zeros(len(present), dtype=RECORD)
    if len(present):
        i, j, k = present.T
        rec["i"], rec["j"], rec["k"] = i, j, k
        rec["energy"] = layer.energy[i, j, k]
        rec["blocklength"] = layer.blocklength[i, j, k]
        rec["power"] = layer.power[i, j, k]
        rec["pred"] = layer.pred[i, j, k]
        if layer.first_blocklength is not None:
            rec["first_blocklength"] = layer.first_blocklength[i, j, k]
            rec["first_power"] = layer.first_power[i, j, k]
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        layer.m,
        spec_digest(spec),
        grid_digest(grid),
        layer.n_values.size,
        layer.v_values.size,
        layer.c_values.size,
    )
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(rec)))
        fh.write(layer.n_values.astype("<i8").tobytes())
        fh.write(layer.v_values.astype("<f8").tobytes())
        fh.write(layer.c_values.astype("<f8").tobytes())
        fh.write(rec.tobytes())
    tmp.replace(path)


def load_layer(path, spec: ProblemSpec, grid: StateGrid) -> LayerTable:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise CacheMismatchError(f"{path}: truncated header")
    magic, version, m, s_hash, g_hash, n_n, n_v, n_c = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CacheMismatchError(f"{path}: not a layer cache file")
    if version != VERSION:
        raise CacheMismatchError(f"{path}: format version {version}, expected {VERSION}")
    if s_hash != spec_digest(spec) or g_hash != grid_digest(grid):
        raise CacheMismatchError(f"{path}: written for a different spec or grid")
    off = _HEADER.size
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    n_values = np.frombuffer(data, "<i8", n_n, off)
    off += 8 * n_n
    v_values = np.frombuffer(data, "<f8", n_v, off)
    off += 8 * n_v
    c_values = np.frombuffer(data, "<f8", n_c, off)
    off += 8 * n_c
    if len(data) != off + count * RECORD.itemsize:
        raise CacheMismatchError(f"{path}: record section has the wrong size")
    rec = np.frombuffer(data, RECORD, count, off)
    layer = _empty_layer(m, n_values, v_values, c_values, first=(m == 2))
    i, j, k = rec["i"], rec["j"], rec["k"]
    layer.energy[i, j, k] = rec["energy"]
    layer.blocklength[i, j, k] = rec["blocklength"]
    layer.power[i, j, k] = rec["power"]
    layer.pred[i, j, k] = rec["pred"]
    if m == 2:
        layer.first_blocklength[i, j, k] = rec["first_blocklength"]
        layer.first_power[i, j, k] = rec["first_power"]
    return layer
