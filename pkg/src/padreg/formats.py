"""Bit-exact binary file formats: PGM/PPM images and .flo flow fields.

Intensity frames are PGM P5 with big-endian 16-bit samples by default, masks
are PGM P5 with maxval 2, color renderings are PPM P6. Flow files follow the
common optical-flow layout: magic "PIEH", little-endian int32 width and
height, then row-major interleaved (horizontal, vertical) float32 pairs. The
engine maps dy to the horizontal component and dx to the vertical one.
"""

from __future__ import annotations

import os
import struct
from typing import Tuple, Union

import numpy as np

from .fields import ScalarField, VectorField
from .flowviz import RgbImage
from .metrics import LabelMask
from .physics import StiffnessMap

PathLike = Union[str, os.PathLike]

FLO_MAGIC = b"PIEH"
_WHITESPACE = b" \t\r\n\v\f"


def _parse_netpbm_header(data: bytes, magic: bytes,
                         n_fields: int) -> Tuple[list, int]:
    if data[:2] != magic:
        raise ValueError(f"bad magic, expected {magic!r}")
    pos = 2
    values = []
    while len(values) < n_fields:
        while pos < len(data):
            byte = data[pos:pos + 1]
            if byte in _WHITESPACE:
                pos += 1
            elif byte == b"#":
                newline = data.find(b"\n", pos)
                pos = len(data) if newline < 0 else newline + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ValueError("malformed header field")
        values.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ValueError("missing raster separator")
    return values, pos + 1


def _read_pgm_raw(path: PathLike) -> Tuple[np.ndarray, int]:
    with open(path, "rb") as handle:
        data = handle.read()
    (width, height, maxval), offset = _parse_netpbm_header(data, b"P5", 3)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError("invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = height * width * dtype.itemsize
    raster = data[offset:]
    if len(raster) != expected:
        raise ValueError(
            f"PGM raster has {len(raster)} bytes, expected {expected}")
    samples = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if samples.max(initial=0) > maxval:
        raise ValueError("PGM sample exceeds maxval")
    return samples, maxval


def write_pgm(field: ScalarField, path: PathLike, maxval: int = 65535) -> None:
    """Quantize an intensity field in [0, 1] to a P5 PGM file."""
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in [1, 65535]")
    values = field.values
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("intensities must lie in [0, 1]")
    samples = np.rint(values * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{field.width} {field.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(samples.astype(dtype).tobytes())


def read_pgm(path: PathLike) -> ScalarField:
    """Read a P5 PGM file back to intensities in [0, 1]."""
    samples, maxval = _read_pgm_raw(path)
    return ScalarField(samples.astype(np.float64) / maxval)


def write_mask_pgm(mask: LabelMask, path: PathLike) -> None:
    """Store a label mask as a P5 PGM with maxval 2 (raw label bytes)."""
    header = f"P5\n{mask.width} {mask.height}\n2\n".encode("ascii")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(mask.labels.astype("u1").tobytes())


def read_mask_pgm(path: PathLike) -> LabelMask:
    samples, maxval = _read_pgm_raw(path)
    if maxval != 2:
        raise ValueError(f"mask PGM must have maxval 2, got {maxval}")
    return LabelMask(samples.astype(np.int64))


def write_ppm(image: RgbImage, path: PathLike) -> None:
    """Write an RGB byte image as binary P6 PPM."""
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(image.pixels.tobytes())


def read_ppm(path: PathLike) -> RgbImage:
    with open(path, "rb") as handle:
        data = handle.read()
    (width, height, maxval), offset = _parse_netpbm_header(data, b"P6", 3)
    if maxval != 255:
        raise ValueError(f"PPM maxval must be 255, got {maxval}")
    expected = height * width * 3
    raster = data[offset:]
    if len(raster) != expected:
        raise ValueError(
            f"PPM raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype="u1").reshape(height, width, 3)
    return RgbImage(pixels)


def _write_flo_planes(path: PathLike, vertical: np.ndarray,
                      horizontal: np.ndarray) -> None:
    height, width = vertical.shape
    interleaved = np.empty((height, width, 2), dtype="<f4")
    interleaved[..., 0] = horizontal
    interleaved[..., 1] = vertical
    with open(path, "wb") as handle:
        handle.write(FLO_MAGIC)
        handle.write(struct.pack("<ii", width, height))
        handle.write(interleaved.tobytes())


def _read_flo_planes(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != FLO_MAGIC:
        raise ValueError(f"bad flow magic, expected {FLO_MAGIC!r}")
    if len(data) < 12:
        raise ValueError("flow file truncated before header")
    width, height = struct.unpack_from("<ii", data, 4)
    if width < 1 or height < 1:
        raise ValueError("invalid flow dimensions")
    expected = 12 + 8 * height * width
    if len(data) != expected:
        raise ValueError(
            f"flow file has {len(data)} bytes, expected {expected}")
    planes = np.frombuffer(data, dtype="<f4", offset=12)
    planes = planes.reshape(height, width, 2)
    vertical = planes[..., 1].astype(np.float64)
    horizontal = planes[..., 0].astype(np.float64)
    return vertical, horizontal


def write_flow(field: VectorField, path: PathLike) -> None:
    """Write a deformation field (dx vertical, dy horizontal) as .flo."""
    _write_flo_planes(path, field.dx.values, field.dy.values)


def read_flow(path: PathLike) -> VectorField:
    vertical, horizontal = _read_flo_planes(path)
    return VectorField(ScalarField(vertical), ScalarField(horizontal))


def write_stiffness(k: StiffnessMap, path: PathLike) -> None:
    """Write a stiffness map using the flow container (kx vertical)."""
    _write_flo_planes(path, k.kx.values, k.ky.values)


def read_stiffness(path: PathLike) -> StiffnessMap:
    vertical, horizontal = _read_flo_planes(path)
    return StiffnessMap(ScalarField(vertical), ScalarField(horizontal))
