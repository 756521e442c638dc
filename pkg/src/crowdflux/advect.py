"""Grid partitioning and characteristic particle selection.

Each frame is cut into a fixed grid and every cell contributes one particle:
the centroid of its ``s`` fastest pixels. The particle's velocity is either
the mean flow of those pixels (``velocity="mean"``, the cluster centre in
position and velocity alike) or the flow sampled bilinearly at the centroid
(``velocity="centroid"``). Cells without motion keep a stationary particle
at their centre pixel. Selection is stateless from frame to frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import DimensionMismatch, GridTooFine
from .flow_io import FlowField, sample_flow_many

VELOCITY_MODES = ("mean", "centroid")


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_width: int
    cell_height: int
    frame_width: int
    frame_height: int

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def rowcol(self, cell: int) -> tuple[int, int]:
        if not 0 <= cell < self.n:
            raise IndexError(cell)
        return divmod(cell, self.cols)

    def bounds(self, cell: int) -> tuple[int, int, int, int]:
        """Pixel rectangle ``(x0, x1, y0, y1)``, half-open; the last row and column absorb remainders."""
        r, c = self.rowcol(cell)
        x0 = c * self.cell_width
        y0 = r * self.cell_height
        x1 = self.frame_width if c == self.cols - 1 else x0 + self.cell_width
        y1 = self.frame_height if r == self.rows - 1 else y0 + self.cell_height
        return x0, x1, y0, y1

    def center(self, cell: int) -> tuple[float, float]:
        x0, x1, y0, y1 = self.bounds(cell)
        return float(x0 + (x1 - x0) // 2), float(y0 + (y1 - y0) // 2)

    def label_map(self) -> np.ndarray:
        """(height, width) array holding the cell index of every pixel."""
        cols = np.minimum(np.arange(self.frame_width) // self.cell_width, self.cols - 1)
        rows = np.minimum(np.arange(self.frame_height) // self.cell_height, self.rows - 1)
        return rows[:, None] * self.cols + cols[None, :]

    def cells_mask(self, cells: Iterable[int]) -> np.ndarray:
        """Boolean pixel mask covering the given cells."""
        flags = np.zeros(self.n, dtype=bool)
        idx = np.fromiter(cells, dtype=int)
        flags[idx] = True
        return flags[self.label_map()]

    def cells_touching(self, mask: np.ndarray) -> np.ndarray:
        """Sorted indices of cells containing at least one set pixel of ``mask``."""
        return np.unique(self.label_map()[np.asarray(mask, dtype=bool)])


def make_grid(frame_width: int, frame_height: int, b: int) -> GridSpec:
    """``b`` x ``b`` grid; cells are ``floor(dim / b)`` pixels with the remainder in the last row/column."""
    if b < 1:
        raise GridTooFine(f"b must be >= 1, got {b}")
    if b > frame_width or b > frame_height:
        raise GridTooFine(f"b={b} exceeds frame size {frame_width}x{frame_height}")
    return GridSpec(b, b, frame_width // b, frame_height // b, frame_width, frame_height)


def make_block_grid(frame_width: int, frame_height: int, block: int) -> GridSpec:
    """Grid of ``block`` x ``block`` pixel cells (the cell-size reading of a "20x20 blocks" setting)."""
    if block < 1 or block > frame_width or block > frame_height:
        raise GridTooFine(f"block size {block} does not fit {frame_width}x{frame_height}")
    return GridSpec(frame_height // block, frame_width // block, block, block, frame_width, frame_height)


@dataclass(frozen=True)
class CharacteristicParticle:
    cell_index: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    frame_index: int = 0

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


class ParticleSet:
    """The ``n`` particles of one frame, stored as arrays.

    Indexing yields :class:`CharacteristicParticle` objects; the force code
    works on ``positions`` and ``velocities`` directly.
    """

    def __init__(self, positions, velocities, frame_index: int = 0):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities differ in shape")
        self.frame_index = frame_index

    @classmethod
    def from_particles(cls, particles: Iterable[CharacteristicParticle]) -> "ParticleSet":
        ps = list(particles)
        frame = ps[0].frame_index if ps else 0
        return cls([p.position for p in ps], [p.velocity for p in ps], frame)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> CharacteristicParticle:
        x, y = self.positions[i]
        vx, vy = self.velocities[i]
        return CharacteristicParticle(int(i), (float(x), float(y)), (float(vx), float(vy)), self.frame_index)

    def __iter__(self) -> Iterator[CharacteristicParticle]:
        return (self[i] for i in range(len(self)))

    @property
    def speeds(self) -> np.ndarray:
        return np.hypot(self.velocities[:, 0], self.velocities[:, 1])


def _check_dims(flow: FlowField, grid: GridSpec) -> None:
    if flow.width != grid.frame_width or flow.height != grid.frame_height:
        raise DimensionMismatch(
            f"flow is {flow.width}x{flow.height}, grid expects {grid.frame_width}x{grid.frame_height}")


def _top_pixels(speed: np.ndarray, s: int) -> np.ndarray:
    """Flat indices of the ``s`` fastest moving pixels, ties by ascending row-major index."""
    flat = speed.ravel()
    order = np.argsort(-flat, kind="stable")[:s]
    return order[flat[order] > 0]


def _check_mode(velocity: str) -> None:
    if velocity not in VELOCITY_MODES:
        raise ValueError(f"velocity must be one of {VELOCITY_MODES}, got {velocity!r}")


def select_characteristic(grid: GridSpec, cell: int, flow: FlowField, s: int = 5,
                          frame_index: int = 0, velocity: str = "centroid") -> CharacteristicParticle:
    if s < 1:
        raise ValueError("s must be >= 1")
    _check_mode(velocity)
    _check_dims(flow, grid)
    x0, x1, y0, y1 = grid.bounds(cell)
    speed = flow.speed()[y0:y1, x0:x1]
    top = _top_pixels(speed, s)
    if top.size == 0:
        return CharacteristicParticle(cell, grid.center(cell), (0.0, 0.0), frame_index)
    py, px = np.divmod(top, x1 - x0)
    cx = x0 + px.mean()
    cy = y0 + py.mean()
    if velocity == "mean":
        u = flow.u[y0:y1, x0:x1].ravel()[top].astype(np.float64).mean()
        v = flow.v[y0:y1, x0:x1].ravel()[top].astype(np.float64).mean()
        return CharacteristicParticle(cell, (float(cx), float(cy)), (float(u), float(v)), frame_index)
    u, v = sample_flow_many(flow, np.array([cx]), np.array([cy]))
    return CharacteristicParticle(cell, (float(cx), float(cy)), (float(u[0]), float(v[0])), frame_index)


def advect_frame(flow: FlowField, grid: GridSpec, s: int = 5, frame_index: int = 0,
                 velocity: str = "centroid") -> ParticleSet:
    """One characteristic particle per cell, in cell-index order."""
    if s < 1:
        raise ValueError("s must be >= 1")
    _check_mode(velocity)
    _check_dims(flow, grid)
    n = grid.n
    speed = flow.speed()
    uu = flow.u.astype(np.float64)
    vv = flow.v.astype(np.float64)
    pos = np.empty((n, 2))
    vel = np.zeros((n, 2))
    moving = np.zeros(n, dtype=bool)

    def cut(a):
        return (a[:reg_r * ch, :reg_c * cw]
                .reshape(reg_r, ch, reg_c, cw).transpose(0, 2, 1, 3).reshape(reg_r * reg_c, ch * cw))

    # Regular cells in one vectorised pass; remainder-absorbing cells fall back to the loop.
    cw, ch = grid.cell_width, grid.cell_height
    reg_r = grid.rows if grid.frame_height == grid.rows * ch else grid.rows - 1
    reg_c = grid.cols if grid.frame_width == grid.cols * cw else grid.cols - 1
    if reg_r > 0 and reg_c > 0:
        blocks = cut(speed)
        order = np.argsort(-blocks, axis=1, kind="stable")[:, :s]
        top_speed = np.take_along_axis(blocks, order, axis=1)
        keep = top_speed > 0
        count = keep.sum(axis=1)
        py, px = np.divmod(order, cw)
        with np.errstate(invalid="ignore", divide="ignore"):
            mx = (px * keep).sum(axis=1) / count
            my = (py * keep).sum(axis=1) / count
        rr, cc = np.divmod(np.arange(reg_r * reg_c), reg_c)
        cells = rr * grid.cols + cc
        pos[cells, 0] = cc * cw + mx
        pos[cells, 1] = rr * ch + my
        moving[cells] = count > 0
        if velocity == "mean":
            with np.errstate(invalid="ignore", divide="ignore"):
                vel[cells, 0] = (np.take_along_axis(cut(uu), order, axis=1) * keep).sum(axis=1) / count
                vel[cells, 1] = (np.take_along_axis(cut(vv), order, axis=1) * keep).sum(axis=1) / count
        regular = np.zeros(n, dtype=bool)
        regular[cells] = True
    else:
        regular = np.zeros(n, dtype=bool)

    for cell in np.flatnonzero(~regular):
        x0, x1, y0, y1 = grid.bounds(cell)
        top = _top_pixels(speed[y0:y1, x0:x1], s)
        if top.size:
            py, px = np.divmod(top, x1 - x0)
            pos[cell] = (x0 + px.mean(), y0 + py.mean())
            moving[cell] = True
            if velocity == "mean":
                vel[cell] = (uu[y0:y1, x0:x1].ravel()[top].mean(), vv[y0:y1, x0:x1].ravel()[top].mean())

    vel[~moving] = 0.0
    if velocity == "centroid" and moving.any():
        u, v = sample_flow_many(flow, pos[moving, 0], pos[moving, 1])
        vel[moving, 0] = u
        vel[moving, 1] = v
    for cell in np.flatnonzero(~moving):
        pos[cell] = grid.center(cell)
    return ParticleSet(pos, vel, frame_index)


def advect_stream(flows: Iterable[FlowField], grid: GridSpec, s: int = 5,
                  start: int = 0, velocity: str = "centroid") -> Iterator[ParticleSet]:
    for i, f in enumerate(flows, start=start):
        yield advect_frame(f, grid, s, frame_index=i, velocity=velocity)


def write_particles_csv(path, frames: Iterable[ParticleSet]) -> None:
    """Debug dump with columns ``frame,cell,px,py,vx,vy``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "cell", "px", "py", "vx", "vy"])
        for ps in frames:
            for i in range(len(ps)):
                w.writerow([ps.frame_index, i, *(repr(float(a)) for a in ps.positions[i]),
                            *(repr(float(a)) for a in ps.velocities[i])])
