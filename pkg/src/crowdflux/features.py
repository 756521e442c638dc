"""Force flow matrices and visual words.

A clip is ``T`` consecutive frames. Its force flow matrix stacks the
per-cell force magnitudes of those frames (row = frame, column = cell). A
visual word is one column: the force history of a single cell over the clip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


@dataclass(frozen=True, eq=False)
class ForceFlowMatrix:
    values: np.ndarray  # (T, n)
    clip_start: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("force flow matrix must be 2-D")
        if not np.all(np.isfinite(vals)) or (vals < 0).any():
            raise ValueError("force magnitudes must be finite and non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class VisualWord:
    values: np.ndarray
    cell_index: int = 0
    clip_start: int = 0
    token: int | None = None  # dictionary that accepted the word, if any

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def tagged(self, token: int) -> "VisualWord":
        return VisualWord(self.values, self.cell_index, self.clip_start, token)


def build_force_flow(per_frame_forces: Iterable[np.ndarray], T: int, stride: int | None = None,
                     start: int = 0) -> Iterator[ForceFlowMatrix]:
    """Window a stream of per-frame magnitude vectors into clips.

    Windows of ``T`` frames advance by ``stride`` (default ``T``, i.e. no
    overlap); a trailing partial window is dropped. ``start`` is the absolute
    index of the first frame in the stream.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    stride = T if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    buf: list[np.ndarray] = []
    buf_start = start
    skip = 0
    for i, row in enumerate(per_frame_forces, start=start):
        if skip:
            skip -= 1
            buf_start = i + 1
            continue
        buf.append(np.asarray(row, dtype=float))
        if len(buf) == T:
            yield ForceFlowMatrix(np.vstack(buf), buf_start)
            drop = min(stride, T)
            buf = buf[drop:]
            buf_start += drop
            skip = stride - drop


def extract_words(matrix: ForceFlowMatrix, normalize: bool = False) -> list[VisualWord]:
    cols = matrix.values.T
    if normalize:
        norms = np.linalg.norm(cols, axis=1, keepdims=True)
        cols = np.divide(cols, norms, out=np.zeros_like(cols), where=norms > 0)
    return [VisualWord(cols[j], j, matrix.clip_start) for j in range(matrix.n)]


def words_matrix(words: Iterable[VisualWord]) -> np.ndarray:
    """Stack words into an (N, T) array."""
    rows = [w.values for w in words]
    if not rows:
        return np.zeros((0, 0))
    return np.vstack(rows)


def assemble_matrix(words: list[VisualWord]) -> ForceFlowMatrix:
    """Inverse of :func:`extract_words` for an unnormalised word list."""
    ordered = sorted(words, key=lambda w: w.cell_index)
    return ForceFlowMatrix(np.column_stack([w.values for w in ordered]), ordered[0].clip_start)


def write_words_csv(path, words: Iterable[VisualWord]) -> None:
    words = list(words)
    T = len(words[0]) if words else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_start", "cell", *(f"v{i}" for i in range(T))])
        for word in words:
            w.writerow([word.clip_start, word.cell_index, *(repr(float(x)) for x in word.values)])


def read_words_csv(path) -> list[VisualWord]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            out.append(VisualWord(np.array(row[2:], dtype=float), int(row[1]), int(row[0])))
    return out
