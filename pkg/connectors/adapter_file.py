"""Binary adapter container ("LCRA").

One file holds one layer's LoRA factors together with the retained index sets
they were trained on, the layer's full dimensions and the provenance seed.
Everything is little-endian:

    magic "LCRA" | version u16 | name_len u16 | name utf-8
    d_out u32 | d_in u32 | rank u32 | alpha f64 | seed u64
    n_row u32 | I_row u32 * n_row | n_col u32 | I_col u32 * n_col
    B f64 * (n_row * rank) | A f64 * (rank * n_col) | crc32 u32

The CRC covers every byte before it. B and A are row-major.
"""
from __future__ import annotations

import logging
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import NamedTuple

import numpy as np

from adapters.lora import LoraAdapter
from linalg.matrix import DenseMatrix
from pruning.selection import LayerPrune, PruneMap
from utils.errors import (
    ArtifactIOError,
    FormatError,
    IntegrityError,
    LoraFuseError,
    ParameterError,
)

logger = logging.getLogger(__name__)

MAGIC = b"LCRA"
VERSION = 1
SUFFIX = ".lcra"

_HEAD = struct.Struct("<4sHH")
_DIMS = struct.Struct("<IIIdQ")
_U32 = struct.Struct("<I")
_CRC = struct.Struct("<I")


class AdapterRecord(NamedTuple):
    adapter: LoraAdapter
    prune: LayerPrune
    full_dims: tuple[int, int]
    seed: int


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temporary sibling file and rename; readers never see a partial file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as e:
        raise ArtifactIOError(path, e.strerror or str(e)) from e


def encode_adapter(adapter: LoraAdapter, prune: LayerPrune, full_dims: tuple[int, int], seed: int) -> bytes:
    d_out, d_in = full_dims
    if (prune.full_rows, prune.full_cols) != (d_out, d_in):
        raise ParameterError(
            f"layer {adapter.layer_name!r}: map is for {prune.full_rows}x{prune.full_cols}, full dims are {d_out}x{d_in}"
        )
    if (adapter.d_out, adapter.d_in) != (len(prune.rows), len(prune.cols)):
        raise ParameterError(
            f"layer {adapter.layer_name!r}: factors are {adapter.d_out}x{adapter.d_in} "
            f"but the map retains {len(prune.rows)}x{len(prune.cols)}"
        )
    if not 0 <= seed < 2**64:
        raise ParameterError(f"seed {seed} does not fit in u64")
    name = adapter.layer_name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ParameterError("layer name too long")

    parts = [
        _HEAD.pack(MAGIC, VERSION, len(name)),
        name,
        _DIMS.pack(d_out, d_in, adapter.rank, float(adapter.alpha), seed),
        _U32.pack(len(prune.rows)),
        np.asarray(prune.rows, dtype="<u4").tobytes(),
        _U32.pack(len(prune.cols)),
        np.asarray(prune.cols, dtype="<u4").tobytes(),
        np.ascontiguousarray(adapter.B.values, dtype="<f8").tobytes(),
        np.ascontiguousarray(adapter.A.values, dtype="<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def write_adapter(
    path: str | Path,
    adapter: LoraAdapter,
    prune: LayerPrune | PruneMap,
    full_dims: tuple[int, int],
    seed: int,
) -> None:
    """Serialize one adapter; ``prune`` may be the whole map or the layer's entry."""
    if isinstance(prune, PruneMap):
        prune = prune.layer(adapter.layer_name)
    write_atomic(path, encode_adapter(adapter, prune, full_dims, seed))
    logger.debug("wrote %s (%s, rank %d)", path, adapter.layer_name, adapter.rank)


def read_adapter(path: str | Path) -> AdapterRecord:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(path, e.strerror or str(e)) from e
    return decode_adapter(data, path)


def decode_adapter(data: bytes, path: str | Path = "<memory>") -> AdapterRecord:
    """Checks magic, then version, then CRC, and only then parses the payload."""
    if len(data) < len(MAGIC):
        raise IntegrityError(path, f"file is {len(data)} bytes, too short for a header")
    if data[:4] != MAGIC:
        raise FormatError(path, expected=MAGIC.decode(), found=data[:4], field="magic")
    if len(data) < _HEAD.size + _CRC.size:
        raise IntegrityError(path, f"file is {len(data)} bytes, too short for a header")
    _, version, _ = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise FormatError(path, expected=VERSION, found=version, field="version")
    body, (stored,) = data[:-_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    computed = zlib.crc32(body) & 0xFFFFFFFF
    if computed != stored:
        raise IntegrityError(path, f"checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")

    try:
        return _parse(body, path)
    except struct.error as e:
        raise IntegrityError(path, f"payload length mismatch: {e}") from e


def _parse(body: bytes, path) -> AdapterRecord:
    offset = _HEAD.size
    _, _, name_len = _HEAD.unpack_from(body, 0)
    if len(body) < offset + name_len:
        raise IntegrityError(path, "payload ends inside the layer name")
    raw_name = body[offset:offset + name_len]
    try:
        name = raw_name.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(path, expected="utf-8 layer name", found=raw_name, field="name") from e
    offset += name_len

    if len(body) < offset + _DIMS.size:
        raise IntegrityError(path, "payload ends inside the dimension block")
    d_out, d_in, rank, alpha, seed = _DIMS.unpack_from(body, offset)
    offset += _DIMS.size
    rows, offset = _indices(body, offset, path, "I_row")
    cols, offset = _indices(body, offset, path, "I_col")

    b_count, a_count = len(rows) * rank, rank * len(cols)
    expected = offset + 8 * (b_count + a_count)
    if len(body) != expected:
        raise IntegrityError(path, f"payload is {len(body)} bytes, layout needs {expected}")
    b = np.frombuffer(body, dtype="<f8", count=b_count, offset=offset).reshape(len(rows), rank)
    offset += 8 * b_count
    a = np.frombuffer(body, dtype="<f8", count=a_count, offset=offset).reshape(rank, len(cols))

    try:
        prune = LayerPrune(name=name, rows=rows, cols=cols, full_rows=d_out, full_cols=d_in)
        adapter = LoraAdapter(layer_name=name, B=DenseMatrix.of(b), A=DenseMatrix.of(a), alpha=alpha)
    except LoraFuseError as e:
        raise FormatError(path, expected="a consistent adapter", found=str(e), field="payload") from e
    return AdapterRecord(adapter=adapter, prune=prune, full_dims=(d_out, d_in), seed=seed)


def _indices(body: bytes, offset: int, path, label: str) -> tuple[tuple[int, ...], int]:
    if offset + _U32.size > len(body):
        raise IntegrityError(path, f"payload ends before the {label} count")
    (count,) = _U32.unpack_from(body, offset)
    offset += _U32.size
    end = offset + 4 * count
    if end > len(body):
        raise IntegrityError(path, f"payload ends inside {label}")
    values = np.frombuffer(body, dtype="<u4", count=count, offset=offset)
    return tuple(int(v) for v in values), end
