"""On-disk formats: volume files, network checkpoints, histories and metric reports.

Volume file layout (little-endian)::

    b"DWV1" | kind u8 | scalar width u8 (= 4) | nu, nv, nw u32 | payload | crc32 u32

``kind`` is 0 intensity, 1 label, 2 displacement field. The payload holds float32
scalars with u varying fastest; a field stores its 3 components interleaved per
voxel. The CRC covers the payload bytes only.

Checkpoint layout::

    b"DWCK" | version u32 | header length u32 | JSON header | float64 payload | crc32 u32

The header records the architecture and, per tensor, its name, shape and offset.
The CRC covers header and payload.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import ArchConfig
from .network import NetworkParams, param_shapes
from .volume import DisplacementField, Volume

VOLUME_MAGIC = b"DWV1"
CHECKPOINT_MAGIC = b"DWCK"
CHECKPOINT_VERSION = 1
KIND_INTENSITY, KIND_LABEL, KIND_DVF = 0, 1, 2
SCALAR_WIDTH = 4
_VOLUME_HEADER = struct.Struct("<4sBB3I")
# guards against absurd headers before any allocation
MAX_VOXELS = 1 << 30


class FormatError(ValueError):
    """Base class for malformed files."""


class BadMagic(FormatError):
    pass


class DimOverflow(FormatError):
    pass


class Truncated(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


def atomic_write(path, data: bytes):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode("utf-8"))


# --- volumes ------------------------------------------------------------------

def encode_volume(v) -> bytes:
    if isinstance(v, DisplacementField):
        kind, data = KIND_DVF, v.data
    elif isinstance(v, Volume):
        kind, data = (KIND_LABEL if v.kind == "label" else KIND_INTENSITY), v.data
    else:
        raise TypeError("expected a Volume or DisplacementField")
    if kind == KIND_DVF:
        dims = data.shape[1:]
    else:
        dims = data.shape
    # Fortran order: u fastest; for a field the component axis comes first and is fastest
    flat = data.ravel(order="F")
    payload = flat.astype("<f4").tobytes()
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, kind, SCALAR_WIDTH, *dims)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def decode_volume(buf: bytes):
    if len(buf) < _VOLUME_HEADER.size:
        raise Truncated(f"file is {len(buf)} bytes, shorter than the {_VOLUME_HEADER.size}-byte header")
    magic, kind, width, nu, nv, nw = _VOLUME_HEADER.unpack_from(buf)
    if magic != VOLUME_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {VOLUME_MAGIC!r}")
    if kind not in (KIND_INTENSITY, KIND_LABEL, KIND_DVF):
        raise FormatError(f"unknown volume kind {kind}")
    if width != SCALAR_WIDTH:
        raise FormatError(f"unsupported scalar width {width}")
    comps = 3 if kind == KIND_DVF else 1
    n = nu * nv * nw * comps
    if min(nu, nv, nw) == 0 or n > MAX_VOXELS:
        raise DimOverflow(f"dims {(nu, nv, nw)} are empty or exceed the {MAX_VOXELS}-scalar limit")
    expected = _VOLUME_HEADER.size + n * SCALAR_WIDTH + 4
    if len(buf) != expected:
        kind_err = Truncated if len(buf) < expected else FormatError
        raise kind_err(f"file length {len(buf)} does not match {expected} implied by dims {(nu, nv, nw)}")
    payload = buf[_VOLUME_HEADER.size : -4]
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch("payload CRC32 does not match")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if kind == KIND_DVF:
        data = flat.reshape((3, nu, nv, nw), order="F")
        return DisplacementField(data)
    data = flat.reshape((nu, nv, nw), order="F")
    if kind == KIND_LABEL:
        return Volume.labels(data)
    return Volume(data)


def write_volume(path, v):
    atomic_write(path, encode_volume(v))


def read_volume(path):
    with open(path, "rb") as fh:
        return decode_volume(fh.read())


# --- checkpoints ---------------------------------------------------------------

def encode_checkpoint(params: NetworkParams) -> bytes:
    index, chunks, offset = [], [], 0
    for name, t in params.tensors.items():
        raw = np.ascontiguousarray(t, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arch": asdict(params.arch), "tensors": index}, sort_keys=True).encode("utf-8")
    body = header + b"".join(chunks)
    return (
        CHECKPOINT_MAGIC
        + struct.pack("<II", CHECKPOINT_VERSION, len(header))
        + body
        + struct.pack("<I", zlib.crc32(body))
    )


def decode_checkpoint(buf: bytes) -> NetworkParams:
    if len(buf) < 16:
        raise Truncated("checkpoint is shorter than its fixed header")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    body = buf[12:-4]
    if len(body) < hlen:
        raise Truncated("checkpoint header extends past the end of the file")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("checkpoint CRC32 does not match")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
        arch = ArchConfig(**header["arch"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}") from exc
    payload = body[hlen:]
    expected = param_shapes(arch)
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise FormatError(f"tensor {entry['name']!r} with shape {shape} does not fit the stored architecture")
        n = int(np.prod(shape)) * 8
        start = entry["offset"]
        if start + n > len(payload):
            raise Truncated(f"tensor {entry['name']!r} extends past the payload")
        tensors[entry["name"]] = np.frombuffer(payload[start : start + n], dtype="<f8").reshape(shape).copy()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise FormatError(f"checkpoint is missing tensors {missing}")
    # keep the canonical execution order
    return NetworkParams(arch, {k: tensors[k] for k in expected})


def save_checkpoint(path, params: NetworkParams):
    atomic_write(path, encode_checkpoint(params))


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# --- reports -----------------------------------------------------------------

REPORT_FIELDS = ("pair_id", "label_id", "metric", "value")


def metrics_csv(rows: Iterable[tuple]) -> str:
    """Rows of ``(pair_id, label_id or "GLOBAL", metric, value)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for pair_id, label_id, metric, value in rows:
        w.writerow([pair_id, label_id, metric, repr(float(value))])
    return buf.getvalue()
