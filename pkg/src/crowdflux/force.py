"""Anticipatory repulsion between characteristic particles.

Two particles interact through the projected time-to-collision ``tau`` of
two constant-velocity discs whose radii sum to ``R``. The pair energy is

    E(tau) = k / tau**2 * exp(-tau / tau0)

and the force on particle ``i`` is minus the gradient of ``E`` with respect
to its position. All times are in frames, distances in pixels.

A particle standing still (the placeholder of a cell without motion) is
not a pedestrian: pairs involving one exert no force on each other unless
``stationary_interacts`` is set.

The net force on a particle is the plain sum of its pairwise repulsions.
Only the magnitude reaches the feature stage, so the overall sign
convention has no effect on detection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .advect import CharacteristicParticle, ParticleSet
from .errors import DomainError

NO_COLLISION = math.inf
GRAZING_EPS = 1e-12


@dataclass(frozen=True)
class InteractionParams:
    k: float = 1.5
    tau0: float = 90.0
    tau_max: float = 270.0
    radius: float = 6.0
    tau_min: float = 0.1
    cutoff: float | None = None  # optional spatial pre-screen, pixels
    stationary_interacts: bool = False
    max_force: float | None = None  # optional cap on each pair's force magnitude

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if not self.tau_max > self.tau0:
            raise ValueError("tau_max must exceed tau0")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not 0 < self.tau_min < self.tau_max:
            raise ValueError("need 0 < tau_min < tau_max")
        if self.max_force is not None and not self.max_force > 0:
            raise ValueError("max_force must be positive")

    @classmethod
    def from_seconds(cls, k: float, tau0_seconds: float, fps: float, radius: float,
                     tau_min: float = 0.1, tau_max_factor: float = 3.0,
                     cutoff: float | None = None,
                     stationary_interacts: bool = False,
                     max_force: float | None = None) -> "InteractionParams":
        tau0 = tau0_seconds * fps
        return cls(k=k, tau0=tau0, tau_max=tau_max_factor * tau0, radius=radius,
                   tau_min=tau_min, cutoff=cutoff, stationary_interacts=stationary_interacts,
                   max_force=max_force)


@dataclass(frozen=True)
class ForceVector:
    fx: float
    fy: float

    @property
    def magnitude(self) -> float:
        return math.hypot(self.fx, self.fy)

    def __iter__(self):
        return iter((self.fx, self.fy))


# -- vectorised kernels -------------------------------------------------------

def ttc_array(w: np.ndarray, v: np.ndarray, radius: float, tau_min: float) -> np.ndarray:
    """Time-to-collision for relative positions ``w = x_j - x_i`` and velocities ``v = v_j - v_i``.

    Arrays have a trailing axis of length 2. Returns ``inf`` where the discs
    never touch. Overlapping pairs that are still closing get ``tau_min``;
    overlapping pairs that are separating or moving in parallel get ``inf``.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.einsum("...k,...k->...", v, v)
    b = np.einsum("...k,...k->...", w, v)
    c = np.einsum("...k,...k->...", w, w) - radius * radius
    disc = b * b - a * c
    tau = np.full(a.shape, np.inf)

    closing = (b < 0) & (a > 0)
    hit = closing & (c > 0) & (disc >= 0)
    # c / (-b + sqrt(disc)) is the smaller root without cancellation
    tau[hit] = c[hit] / (-b[hit] + np.sqrt(disc[hit]))
    tau[closing & (c <= 0)] = tau_min
    return np.where(tau < tau_min, tau_min, tau)


def energy_array(tau: np.ndarray, params: InteractionParams) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(tau.shape)
    live = tau <= params.tau_max
    t = tau[live]
    out[live] = params.k / (t * t) * np.exp(-t / params.tau0)
    return out


def denergy_array(tau: np.ndarray, params: InteractionParams) -> np.ndarray:
    """dE/dtau, zero beyond ``tau_max``."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(tau.shape)
    live = tau <= params.tau_max
    t = tau[live]
    out[live] = -params.k * np.exp(-t / params.tau0) * (2.0 / t**3 + 1.0 / (t * t * params.tau0))
    return out


def force_array(w: np.ndarray, v: np.ndarray, params: InteractionParams) -> np.ndarray:
    """Force on particle ``i`` for each (w, v) pair; shape ``(..., 2)``."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    tau = ttc_array(w, v, params.radius, params.tau_min)
    live = tau <= params.tau_max
    out = np.zeros(w.shape)
    if not live.any():
        return out
    wl, vl = w[live], v[live]
    a = np.einsum("ik,ik->i", vl, vl)
    b = np.einsum("ik,ik->i", wl, vl)
    c = np.einsum("ik,ik->i", wl, wl) - params.radius ** 2
    # The gradient is taken at the true contact root; a root below tau_min only
    # saturates dE/dtau. Overlapping pairs sit on the pinned tau_min plateau,
    # whose spatial gradient is zero.
    apart = c > 0
    root = np.full(a.shape, np.nan)
    disc = np.maximum(b[apart] ** 2 - a[apart] * c[apart], 0.0)
    root[apart] = c[apart] / (-b[apart] + np.sqrt(disc))
    denom = a * root + b
    ok = apart & (np.abs(denom) > GRAZING_EPS)
    contact = wl + vl * np.where(ok, root, 0.0)[:, None]
    # grad wrt x_i of tau is (w + v tau) / (a tau + b); F = -dE/dtau * grad
    scale = np.zeros(a.shape)
    scale[ok] = -denergy_array(tau[live][ok], params) / denom[ok]
    f = scale[:, None] * contact
    if params.max_force is not None:
        mag = np.hypot(f[:, 0], f[:, 1])
        big = mag > params.max_force
        f[big] *= (params.max_force / mag[big])[:, None]
    out[live] = f
    return out


# -- scalar API -----------------------------------------------------------------

def _rel(p_i: CharacteristicParticle, p_j: CharacteristicParticle):
    w = np.subtract(p_j.position, p_i.position, dtype=float)
    v = np.subtract(p_j.velocity, p_i.velocity, dtype=float)
    return w, v


def time_to_collision(p_i: CharacteristicParticle, p_j: CharacteristicParticle, radius: float,
                      tau_min: float = 0.1) -> float:
    """Frames until the two discs first touch, or ``NO_COLLISION`` (``inf``)."""
    w, v = _rel(p_i, p_j)
    return float(ttc_array(w, v, radius, tau_min))


def interaction_energy(tau: float, params: InteractionParams) -> float:
    if tau < params.tau_min:
        raise DomainError(f"tau={tau} below tau_min={params.tau_min}; clamp before evaluating")
    if tau > params.tau_max:
        return 0.0
    return params.k / tau**2 * math.exp(-tau / params.tau0)


def energy_derivative(tau: float, params: InteractionParams) -> float:
    if tau < params.tau_min:
        raise DomainError(f"tau={tau} below tau_min={params.tau_min}")
    if tau > params.tau_max:
        return 0.0
    return -params.k * math.exp(-tau / params.tau0) * (2.0 / tau**3 + 1.0 / (tau**2 * params.tau0))


def _interacting(vi: np.ndarray, vj: np.ndarray, params: InteractionParams) -> np.ndarray:
    if params.stationary_interacts:
        return np.ones(np.broadcast_shapes(vi.shape[:-1], vj.shape[:-1]), dtype=bool)
    return np.any(vi != 0, axis=-1) & np.any(vj != 0, axis=-1)


def repulsive_force(p_i: CharacteristicParticle, p_j: CharacteristicParticle,
                    params: InteractionParams) -> ForceVector:
    if not _interacting(np.asarray(p_i.velocity, float), np.asarray(p_j.velocity, float), params):
        return ForceVector(0.0, 0.0)
    w, v = _rel(p_i, p_j)
    f = force_array(w[None], v[None], params)[0]
    return ForceVector(float(f[0]), float(f[1]))


def net_force(p_i: CharacteristicParticle, neighbors: Sequence[CharacteristicParticle],
              params: InteractionParams) -> ForceVector:
    if not neighbors:
        return ForceVector(0.0, 0.0)
    xi = np.asarray(p_i.position, dtype=float)
    vi = np.asarray(p_i.velocity, dtype=float)
    vj = np.array([p.velocity for p in neighbors], dtype=float)
    keep = _interacting(vi, vj, params)
    w = np.array([p.position for p in neighbors], dtype=float)[keep] - xi
    v = vj[keep] - vi
    f = force_array(w, v, params).sum(axis=0)
    return ForceVector(float(f[0]), float(f[1]))


def frame_force_vectors(particles: ParticleSet | Sequence[CharacteristicParticle],
                        params: InteractionParams) -> np.ndarray:
    """Net force on every particle of a frame, shape (n, 2).

    Each unordered pair is evaluated once; the force on ``j`` from ``i`` is
    the negation of the force on ``i`` from ``j``.
    """
    if not isinstance(particles, ParticleSet):
        particles = ParticleSet.from_particles(particles)
    x = particles.positions
    vel = particles.velocities
    n = len(x)
    out = np.zeros((n, 2))
    if n < 2:
        return out
    ii, jj = np.triu_indices(n, k=1)
    # pairs with no relative motion never collide
    moving = np.any(vel[ii] != vel[jj], axis=1) & _interacting(vel[ii], vel[jj], params)
    ii, jj = ii[moving], jj[moving]
    w = x[jj] - x[ii]
    if params.cutoff is not None:
        near = np.einsum("ik,ik->i", w, w) <= params.cutoff ** 2
        ii, jj, w = ii[near], jj[near], w[near]
    v = vel[jj] - vel[ii]
    f = force_array(w, v, params)
    np.add.at(out, ii, f)
    np.add.at(out, jj, -f)
    return out


def frame_forces(particles: ParticleSet | Sequence[CharacteristicParticle],
                 params: InteractionParams) -> np.ndarray:
    """Euclidean magnitude of the net force on each particle."""
    f = frame_force_vectors(particles, params)
    return np.hypot(f[:, 0], f[:, 1])


def write_forces_csv(path, frames: Iterable[tuple[int, np.ndarray]]) -> None:
    """Debug dump with columns ``frame,cell,fx,fy,fmag`` from ``(frame, (n, 2) forces)`` pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "cell", "fx", "fy", "fmag"])
        for frame, f in frames:
            for cell, (fx, fy) in enumerate(np.asarray(f, dtype=float)):
                w.writerow([frame, cell, repr(fx), repr(fy), repr(math.hypot(fx, fy))])
