"""
Binary formats for checkpoints and sparse diffs.

Both formats are little-endian with fixed-width fields and end in a CRC32 of
every preceding byte. See README.md for the byte layout.

Sparse diff (.dpdf)
    magic "DPDF", version u16, total_dim u64, n_entries u64,
    meta_len u32, meta (UTF-8 JSON),
    positions u32[n_entries], values f32[n_entries],
    segment table, crc32 u32

Checkpoint (.dpck)
    magic "DPCK", version u16, total_dim u64,
    meta_len u32, meta (UTF-8 JSON),
    tensor table, data region (f32[total_dim]), crc32 u32

A segment entry is name_len u16, name, offset u64, length u64, layer u16,
head u8, ndim u8, dims u32[ndim]. A tensor entry is name_len u16, name,
layer u16, head u8, ndim u8, dims u32[ndim], dtype u8, byte offset u64,
nbytes u64 (offsets relative to the data region).
"""

import json
import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apps.diffs.errors import DiffError, SpaceError
from apps.diffs.services import DiffVector, compose
from apps.diffs.space import FlatParamSpace, Segment

from .errors import (
    BadMagicError,
    ChecksumError,
    CodecError,
    MalformedFileError,
    SegmentMismatchError,
    TruncatedFileError,
    UnsortedPositionsError,
    UnsupportedDimensionError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

DIFF_MAGIC = b"DPDF"
CHECKPOINT_MAGIC = b"DPCK"
VERSION = 1
DTYPE_FLOAT32 = 1
MAX_DIM = 2**32

_DIFF_HEADER = struct.Struct("<4sHQQI")
_CHECKPOINT_HEADER = struct.Struct("<4sHQI")
_CRC = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class DiffFile:
    delta: DiffVector
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    space: FlatParamSpace
    theta: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float32)
        if theta.shape != (self.space.total_dim,):
            raise MalformedFileError(f"theta has {theta.size} values for a space of {self.space.total_dim}")
        object.__setattr__(self, "theta", theta)


class _Reader:
    def __init__(self, data, limit):
        self.data = data
        self.limit = limit
        self.pos = 0

    def take(self, n):
        end = self.pos + n
        if end > self.limit:
            raise TruncatedFileError(end + _CRC.size, self.limit + _CRC.size)
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype)


def _meta_bytes(metadata):
    return json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _read_meta(reader):
    (length,) = reader.unpack("<I")
    try:
        return json.loads(reader.take(length).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedFileError(f"metadata is not valid JSON: {exc}") from None


def _shape_bytes(shape):
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _read_shape(reader):
    (ndim,) = reader.unpack("<B")
    return tuple(int(d) for d in reader.unpack(f"<{ndim}I"))


def _name_bytes(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read_name(reader):
    (length,) = reader.unpack("<H")
    try:
        return reader.take(length).decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedFileError("segment name is not UTF-8") from None


def _segment_table(space):
    parts = [struct.pack("<I", len(space.segments))]
    for seg in space.segments:
        parts.append(_name_bytes(seg.name))
        parts.append(struct.pack("<QQHB", seg.offset, seg.length, seg.layer, int(seg.head)))
        parts.append(_shape_bytes(seg.shape))
    return b"".join(parts)


def _read_count(reader, total_dim, what):
    (count,) = reader.unpack("<I")
    if count > max(total_dim, 1):
        raise MalformedFileError(f"{count} {what} for a space of {total_dim}")
    return count


def _check_tiling(name, offset, length, shape, cursor, total_dim):
    if offset != cursor or offset + length > total_dim:
        raise MalformedFileError(f"segment {name}: [{offset}, {offset + length}) does not follow {cursor}")
    if math.prod(shape) != length:
        raise MalformedFileError(f"segment {name}: shape {shape} does not hold {length} values")


def _read_segment_table(reader, total_dim):
    count = _read_count(reader, total_dim, "segments")
    segments = []
    cursor = 0
    for _ in range(count):
        name = _read_name(reader)
        offset, length, layer, head = reader.unpack("<QQHB")
        shape = _read_shape(reader)
        _check_tiling(name, offset, length, shape, cursor, total_dim)
        segments.append(Segment(name, offset, length, shape, layer, bool(head)))
        cursor += length
    return _space(segments)


def _space(segments):
    try:
        return FlatParamSpace(segments)
    except SpaceError as exc:
        raise MalformedFileError(f"segment table: {exc}") from None


def _seal(body):
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _open(data, magic, parse):
    """Check magic, version and checksum, then parse the body.

    When the checksum fails the body is parsed again. Every field read is
    checked against the header (counts, sorted positions, segment tiling), so
    a corrupted field shows up as an inconsistency and is reported as a
    checksum error. Only a consistent prefix that runs out of bytes is
    reported as truncated.
    """
    data = bytes(data)
    if len(data) < 4:
        raise TruncatedFileError(4, len(data))
    if data[:4] != magic:
        raise BadMagicError(magic, data[:4])
    if len(data) < 6:
        raise TruncatedFileError(6, len(data))
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(version)
    if len(data) < 6 + _CRC.size:
        raise TruncatedFileError(6 + _CRC.size, len(data))

    body = len(data) - _CRC.size
    (stored,) = _CRC.unpack_from(data, body)
    computed = zlib.crc32(data[:body]) & 0xFFFFFFFF
    if stored != computed:
        try:
            parse(_Reader(data, body))
        except TruncatedFileError:
            raise
        except CodecError:
            pass
        raise ChecksumError(stored, computed)

    reader = _Reader(data, body)
    result = parse(reader)
    if reader.pos != body:
        raise MalformedFileError(f"{body - reader.pos} unexpected bytes before the checksum")
    return result


# ---------------------------------------------------------------------------
# Sparse diffs
# ---------------------------------------------------------------------------

def encode(delta, metadata=None):
    """Canonical bytes of a DiffVector; identical inputs give identical bytes."""
    if delta.dim >= MAX_DIM:
        raise UnsupportedDimensionError(delta.dim)
    meta = _meta_bytes(metadata)
    body = b"".join([
        _DIFF_HEADER.pack(DIFF_MAGIC, VERSION, delta.dim, delta.nnz, len(meta)),
        meta,
        delta.positions.astype("<u4").tobytes(),
        delta.values.astype("<f4").tobytes(),
        _segment_table(delta.space),
    ])
    return _seal(body)


def _parse_diff(reader):
    _, _, total_dim, n_entries = reader.unpack("<4sHQQ")
    if n_entries > total_dim:
        raise MalformedFileError(f"{n_entries} entries for a space of {total_dim}")
    metadata = _read_meta(reader)
    positions = reader.array("<u4", n_entries).astype(np.int64)
    steps = np.diff(positions)
    if np.any(steps <= 0):
        raise UnsortedPositionsError(int(np.flatnonzero(steps <= 0)[0]) + 1)
    if positions.size and positions[-1] >= total_dim:
        raise MalformedFileError(f"position {positions[-1]} outside a space of {total_dim}")
    values = reader.array("<f4", n_entries).astype(np.float32)
    space = _read_segment_table(reader, total_dim)
    return total_dim, positions, values, space, metadata


def decode_file(data):
    total_dim, positions, values, space, metadata = _open(data, DIFF_MAGIC, _parse_diff)
    if space.total_dim != total_dim:
        raise MalformedFileError(f"header total_dim {total_dim} != segment table {space.total_dim}")
    try:
        delta = DiffVector(space, positions, values)
    except DiffError as exc:
        raise MalformedFileError(str(exc)) from None
    return DiffFile(delta, metadata)


def decode(data):
    """Exact inverse of encode."""
    return decode_file(data).delta


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def encode_checkpoint(checkpoint):
    space = checkpoint.space
    meta = _meta_bytes(checkpoint.metadata)
    parts = [
        _CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, VERSION, space.total_dim, len(meta)),
        meta,
        struct.pack("<I", len(space.segments)),
    ]
    for seg in space.segments:
        parts.append(_name_bytes(seg.name))
        parts.append(struct.pack("<HB", seg.layer, int(seg.head)))
        parts.append(_shape_bytes(seg.shape))
        parts.append(struct.pack("<BQQ", DTYPE_FLOAT32, 4 * seg.offset, 4 * seg.length))
    parts.append(checkpoint.theta.astype("<f4").tobytes())
    return _seal(b"".join(parts))


def _parse_checkpoint(reader):
    _, _, total_dim = reader.unpack("<4sHQ")
    metadata = _read_meta(reader)
    count = _read_count(reader, total_dim, "tensors")
    segments = []
    cursor = 0
    for _ in range(count):
        name = _read_name(reader)
        layer, head = reader.unpack("<HB")
        shape = _read_shape(reader)
        dtype, offset, nbytes = reader.unpack("<BQQ")
        if dtype != DTYPE_FLOAT32:
            raise MalformedFileError(f"tensor {name}: unsupported dtype code {dtype}")
        if offset != cursor or nbytes % 4:
            raise MalformedFileError(f"tensor {name}: data at {offset} overlaps or leaves a gap")
        _check_tiling(name, offset // 4, nbytes // 4, shape, cursor // 4, total_dim)
        segments.append(Segment(name, offset // 4, nbytes // 4, shape, layer, bool(head)))
        cursor += nbytes
    if cursor != 4 * total_dim:
        raise MalformedFileError(f"tensor table covers {cursor} bytes, header says {4 * total_dim}")
    theta = reader.array("<f4", total_dim).astype(np.float32)
    return _space(segments), theta, metadata


def decode_checkpoint(data):
    space, theta, metadata = _open(data, CHECKPOINT_MAGIC, _parse_checkpoint)
    return Checkpoint(space, theta, metadata)


# ---------------------------------------------------------------------------
# Patching and files
# ---------------------------------------------------------------------------

def apply_patch(base, delta, metadata=None):
    """Checkpoint holding compose(base.theta, delta); base is not modified."""
    divergence = base.space.first_divergence(delta.space)
    if divergence is not None:
        raise SegmentMismatchError(divergence)
    return Checkpoint(
        base.space,
        compose(base.theta, delta),
        base.metadata if metadata is None else metadata,
    )


def atomic_write(path, data):
    """Write to a temporary file in the target directory, then rename over path."""
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
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("wrote %d bytes to %s", len(data), path)
    return path


def save_diff(path, delta, metadata=None):
    return atomic_write(path, encode(delta, metadata))


def load_diff(path):
    return decode_file(Path(path).read_bytes())


def save_checkpoint(path, checkpoint):
    return atomic_write(path, encode_checkpoint(checkpoint))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
