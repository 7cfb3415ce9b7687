"""Self-describing binary checkpoint.

Layout::

    bytes 0..7    magic b"PARC2\\0\\0\\0"
    bytes 8..15   header length L, unsigned 64-bit little endian
    bytes 16..    L bytes of UTF-8 JSON header
    zero padding to the next multiple of 64: payload start
    payload       raw little-endian tensors in manifest order, each starting
                  on a 64-byte boundary relative to payload start

Header fields: ``magic``, ``format_version``, ``created_utc``, ``config``
(a ModelConfig dict) and ``manifest``, a list of
``{name, dtype, shape, byte_offset, byte_length}`` with offsets relative to
the payload start.
"""
from __future__ import annotations

import datetime as _dt
import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, param_shapes

MAGIC = b"PARC2\0\0\0"
FORMAT_VERSION = 1
ALIGN = 64
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NAMES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


def _align(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def _dtype_name(a: np.ndarray) -> str:
    try:
        return _NAMES[a.dtype.newbyteorder("<")]
    except KeyError:
        raise CheckpointError(f"unsupported dtype {a.dtype}") from None


def save_tensors(path, tensors: dict[str, np.ndarray], config: dict,
                 created_utc: str | None = None) -> None:
    manifest, offset = [], 0
    for name, arr in tensors.items():
        nbytes = arr.size * arr.dtype.itemsize
        manifest.append({"name": name, "dtype": _dtype_name(arr), "shape": list(arr.shape),
                         "byte_offset": offset, "byte_length": nbytes})
        offset = _align(offset + nbytes)
    if created_utc is None:
        created_utc = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    header = json.dumps({
        "magic": "PARC2",
        "format_version": FORMAT_VERSION,
        "created_utc": created_utc,
        "config": config,
        "manifest": manifest,
    }).encode("utf-8")
    payload_start = _align(16 + len(header))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(b"\0" * (payload_start - 16 - len(header)))
        pos = 0
        for entry, arr in zip(manifest, tensors.values()):
            f.write(b"\0" * (entry["byte_offset"] - pos))
            data = np.ascontiguousarray(arr, dtype=_DTYPES[entry["dtype"]]).tobytes()
            f.write(data)
            pos = entry["byte_offset"] + len(data)


def read_header(path) -> tuple[dict, int]:
    """Returns ``(header, payload_start)`` after validating the framing."""
    data = Path(path).read_bytes()
    return _parse_header(data)


def _parse_header(data: bytes) -> tuple[dict, int]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a PARC2 checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable header: {e}") from None
    if header.get("magic") != "PARC2":
        raise CheckpointError("header magic mismatch")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
    return header, _align(16 + hlen)


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    header, start = _parse_header(data)
    payload = len(data) - start
    tensors, prev_end = {}, 0
    for entry in sorted(header["manifest"], key=lambda e: e["byte_offset"]):
        name = entry["name"]
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"tensor {name!r}: unknown dtype {entry['dtype']!r}")
        off, length = entry["byte_offset"], entry["byte_length"]
        if length != int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize:
            raise CheckpointError(f"tensor {name!r}: byte_length does not match shape")
        if off < prev_end:
            raise CheckpointError(f"tensor {name!r}: overlaps the previous tensor")
        if off + length > payload:
            raise CheckpointError(
                f"tensor {name!r}: bytes {off}..{off + length} exceed payload of {payload} bytes"
            )
        prev_end = off + length
        arr = np.frombuffer(data, dtype=dt, count=length // dt.itemsize, offset=start + off)
        tensors[name] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
    # restore manifest order
    return header, {e["name"]: tensors[e["name"]] for e in header["manifest"]}


def checkpoint_save(model: Model, path, created_utc: str | None = None) -> None:
    save_tensors(path, model.params, model.cfg.to_dict(), created_utc)


def checkpoint_load(path, expect: ModelConfig | None = None) -> Model:
    header, tensors = load_tensors(path)
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError, KeyError) as e:
        raise CheckpointError(f"invalid config in header: {e}") from None
    if expect is not None and expect != cfg:
        raise CheckpointError(f"checkpoint config {cfg} does not match requested {expect}")
    shapes = param_shapes(cfg)
    missing = [n for n in shapes if n not in tensors]
    if missing:
        raise CheckpointError(f"tensor {missing[0]!r} missing ({len(missing)} missing in total)")
    extra = [n for n in tensors if n not in shapes]
    if extra:
        raise CheckpointError(f"tensor {extra[0]!r} is not part of this configuration")
    for name, shape in shapes.items():
        if tuple(tensors[name].shape) != shape:
            raise CheckpointError(
                f"tensor {name!r}: shape {tuple(tensors[name].shape)} but config expects {shape}"
            )
    dtypes = {a.dtype for a in tensors.values()}
    if len(dtypes) != 1:
        raise CheckpointError("mixed tensor precisions in one checkpoint")
    return Model(cfg, {n: tensors[n] for n in shapes})
