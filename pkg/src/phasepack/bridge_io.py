"""File formats shared with the feature-extraction bridge.

Feature dumps are binary: magic "SSFD", then little-endian u16 fields
(format version, C, H, W), a u16 dtype code (0 = float32 LE), the payload in
channel-major order, and a trailing CRC32 of the payload bytes. Pose dumps
are plain text, one `id x y theta` line per shape.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .guidance import FeatureField

MAGIC = b"SSFD"
FORMAT_VERSION = 1
DTYPE_F32LE = 0
_HEADER = struct.Struct("<4sHHHHH")


class FeatureDumpError(ValueError):
    pass


class BadMagicError(FeatureDumpError):
    pass


class SizeMismatchError(FeatureDumpError):
    pass


class ChecksumError(FeatureDumpError):
    pass


class PoseDumpError(ValueError):
    pass


def write_feature_dump(path, values: np.ndarray) -> None:
    """Write a C x H x W float array as a feature dump."""
    v = np.ascontiguousarray(values, dtype="<f4")
    if v.ndim != 3:
        raise FeatureDumpError("feature dump payload must be C x H x W")
    c, h, w = v.shape
    payload = v.tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, c, h, w, DTYPE_F32LE))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_feature_dump(path) -> FeatureField:
    """Read and validate a feature dump; returns a FeatureField tagged 'file'."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a feature dump (bad magic)")
    magic, version, c, h, w, dtype = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise FeatureDumpError(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_F32LE:
        raise FeatureDumpError(f"{path}: unsupported dtype code {dtype}")
    expected = c * h * w * 4
    if len(data) != _HEADER.size + expected + 4:
        raise SizeMismatchError(
            f"{path}: payload size mismatch (header says {expected} bytes, "
            f"file carries {len(data) - _HEADER.size - 4})")
    payload = data[_HEADER.size:_HEADER.size + expected]
    (crc,) = struct.unpack_from("<I", data, _HEADER.size + expected)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: payload CRC32 mismatch")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float64)
    return FeatureField(values, source="file")


def write_pose_dump(path, ids, poses) -> None:
    """Write `id x y theta` lines (full float precision, round-trip safe)."""
    with open(path, "w") as fh:
        fh.write("# id x y theta\n")
        for shape_id, pose in zip(ids, poses):
            fh.write(f"{shape_id} {float(pose.p[0])!r} {float(pose.p[1])!r} "
                     f"{float(pose.theta)!r}\n")


def read_pose_dump(path, scene):
    """Parse poses and match them one-to-one against the scene's shape ids.

    Returns poses ordered like scene.shapes. Angles are wrapped to [0, 2*pi)
    on load. Raises PoseDumpError (with line numbers) on parse problems and on
    missing, duplicate, or unknown ids.
    """
    from .geometry import Pose

    parsed = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 4:
                raise PoseDumpError(f"{path}:{lineno}: expected 'id x y theta'")
            try:
                shape_id = int(parts[0])
                x, y, theta = (float(p) for p in parts[1:])
            except ValueError as exc:
                raise PoseDumpError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite([x, y, theta]).all():
                raise PoseDumpError(f"{path}:{lineno}: non-finite pose")
            if shape_id in parsed:
                raise PoseDumpError(f"{path}:{lineno}: duplicate id {shape_id}")
            parsed[shape_id] = Pose(np.array([x, y]), theta)

    scene_ids = [s.id for s in scene.shapes]
    missing = [i for i in scene_ids if i not in parsed]
    extra = [i for i in parsed if i not in scene_ids]
    if missing:
        raise PoseDumpError(f"{path}: missing pose for shape id {missing[0]}")
    if extra:
        raise PoseDumpError(f"{path}: pose for unknown shape id {extra[0]}")
    return [parsed[i] for i in scene_ids]
