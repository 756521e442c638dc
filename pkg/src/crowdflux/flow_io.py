"""Dense optical flow fields and the Middlebury ``.flo`` container.

Flow is forward flow: field ``i`` carries the displacement of every pixel of
frame ``i`` into frame ``i + 1``. Coordinates follow image convention: ``x``
grows rightward, ``y`` downward, origin at the centre of the top-left pixel.
"""

from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import BadMagic, NonFiniteFlow, Truncated

TAG = 202021.25
TAG_BYTES = struct.pack("<f", TAG)
UNKNOWN_FLOW = 1e9
FRAME_PATTERN = "frame_{:06d}.flo"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.flo$")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement, ``u`` horizontal and ``v`` vertical, shape (height, width)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be equal 2-D arrays, got {u.shape} and {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValueError("flow field must be at least 1x1")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def speed(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        z = np.zeros((height, width), dtype=np.float32)
        return cls(z, z.copy())


def read_flo(data: bytes, strict: bool = False) -> FlowField:
    """Decode a little-endian ``.flo`` byte string.

    Entries that are NaN, infinite, or beyond the 1e9 "unknown flow" sentinel
    are zeroed (with a warning giving their count) unless ``strict`` is set,
    in which case :class:`NonFiniteFlow` is raised.
    """
    if len(data) < 12:
        raise Truncated(f"header needs 12 bytes, got {len(data)}")
    if data[:4] != TAG_BYTES:
        raise BadMagic(f"expected tag {TAG}, got {struct.unpack('<f', data[:4])[0]!r}")
    width, height = struct.unpack("<ii", data[4:12])
    if width < 1 or height < 1:
        raise Truncated(f"invalid dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise Truncated(f"expected {expected} bytes for {width}x{height}, got {len(data)}")
    uv = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    u = uv[..., 0].astype(np.float32)
    v = uv[..., 1].astype(np.float32)

    bad = ~np.isfinite(u) | ~np.isfinite(v)
    with np.errstate(invalid="ignore"):
        bad |= (np.abs(u) > UNKNOWN_FLOW) | (np.abs(v) > UNKNOWN_FLOW)
    if bad.any():
        count = int(bad.sum())
        if strict:
            raise NonFiniteFlow(f"{count} pixels carry unknown or non-finite flow")
        warnings.warn(f"zeroed {count} pixels with unknown or non-finite flow", RuntimeWarning, stacklevel=2)
        u[bad] = 0.0
        v[bad] = 0.0
    return FlowField(u, v)


def write_flo(field: FlowField) -> bytes:
    h, w = field.shape
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[..., 0] = field.u
    uv[..., 1] = field.v
    return TAG_BYTES + struct.pack("<ii", w, h) + uv.tobytes()


def load_flo(path, strict: bool = False) -> FlowField:
    return read_flo(Path(path).read_bytes(), strict=strict)


def save_flo(path, field: FlowField) -> None:
    Path(path).write_bytes(write_flo(field))


def sample_flow(field: FlowField, x: float, y: float) -> tuple[float, float]:
    """Bilinear (u, v) at a subpixel position; positions off the frame clamp to the border."""
    u, v = sample_flow_many(field, np.array([x], dtype=float), np.array([y], dtype=float))
    return float(u[0]), float(v[0])


def sample_flow_many(field: FlowField, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = field.shape
    xs = np.clip(np.asarray(xs, dtype=float), 0.0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=float), 0.0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    def interp(a):
        a = a.astype(np.float64)
        top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
        bottom = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
        return top * (1 - fy) + bottom * fy

    return interp(field.u), interp(field.v)


def flow_paths(directory) -> list[Path]:
    """``frame_%06d.flo`` files in ``directory`` ordered by index."""
    found = []
    for p in Path(directory).iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return [p for _, p in sorted(found)]


def iter_flow_dir(directory, start: int = 0, count: int | None = None,
                  strict: bool = False) -> Iterator[FlowField]:
    paths = flow_paths(directory)[start:]
    if count is not None:
        paths = paths[:count]
    for p in paths:
        yield load_flo(p, strict=strict)


def write_flow_dir(directory, fields, start: int = 0) -> int:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = 0
    for i, f in enumerate(fields, start=start):
        save_flo(directory / FRAME_PATTERN.format(i), f)
        n += 1
    return n
