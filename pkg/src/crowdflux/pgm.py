"""Binary (P5) PGM masks: 0 = normal, 255 = abnormal."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import CrowdFluxError

_HEADER = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def encode_pgm(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask)
    h, w = mask.shape
    body = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode() + body.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Boolean mask; any nonzero pixel counts as abnormal."""
    m = _HEADER.match(data)
    if not m:
        raise CrowdFluxError("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise CrowdFluxError("16-bit PGM not supported")
    body = data[m.end():]
    if len(body) != w * h:
        raise CrowdFluxError(f"PGM body has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) > 0


def write_pgm(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(mask))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def read_mask_dir(directory, prefix: str) -> dict[int, np.ndarray]:
    """``{frame: mask}`` for every ``<prefix>_%06d.pgm`` in ``directory``."""
    pat = re.compile(rf"^{re.escape(prefix)}_(\d+)\.pgm$")
    out = {}
    for p in sorted(Path(directory).iterdir()):
        m = pat.match(p.name)
        if m:
            out[int(m.group(1))] = read_pgm(p)
    return out
