"""Run configuration and per-scene profiles.

Configuration is a flat set of keys, read from ``key=value`` files and
overridable one by one (the command line exposes every key as a flag of the
same name). Profiles carry the per-scene settings; keys not set by a
profile keep the defaults below.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .advect import GridSpec, make_block_grid, make_grid
from .codebook import TrainingParams
from .errors import InvalidConfig
from .force import InteractionParams
from .synth import parse_keyvalue

PROFILES: dict[str, dict] = {
    "umn": dict(b=20, lam=0.08, k=1.5, tau0=3.0, T=30, n_pool=4000, fps=30.0),
    "ucsd": dict(b=10, lam=0.06, k=1.5, tau0=2.0, T=20, n_pool=2000, fps=10.0),
    "web": dict(b=20, lam=0.04, k=1.5, tau0=2.0, T=20, n_pool=2000, fps=30.0),
}

THREADS_ENV = "CROWDFLUX_THREADS"


@dataclass(frozen=True)
class Config:
    profile: str = "umn"
    # grid
    b: int = 20
    grid_mode: str = "count"  # "count": b x b cells; "size": square cells of `block` pixels
    block: int = 20
    top_s: int = 5
    particle_velocity: str = "centroid"  # bilinear sample at the centroid, or "mean" of the top-s pixels
    # interaction
    k: float = 1.5
    tau0: float = 3.0  # seconds
    fps: float = 30.0
    tau_min: float = 0.1  # frames
    tau_max_factor: float = 3.0
    radius: float = 0.0  # pixels; 0 means min(cell_width, cell_height) / 2
    cutoff: float = 0.0  # pixels; 0 disables the spatial pre-screen
    stationary_interacts: bool = True
    max_force: float = 1.0  # per-pair force cap; 0 disables it
    # features
    T: int = 30
    stride: int = 0  # 0 means T (non-overlapping clips)
    normalize: bool = False
    # codebook
    lam: float = 0.08
    d: int = 10
    s_max: int = 100
    epochs: int = 15
    restarts: int = 4
    trim: float = 0.5
    coverage: float = 0.99
    seed: int = 0
    n_pool: int = 4000
    delta: float = 1e-4
    passes: int = 1
    update: bool = True
    min_global_words: int = -1  # pooled words needed for a global retrain; -1 means n_pool
    threads: int = -1  # -1 defers to CROWDFLUX_THREADS, 0 means one worker per CPU

    def __post_init__(self):
        if self.grid_mode not in ("count", "size"):
            raise InvalidConfig(f"grid_mode must be 'count' or 'size', got {self.grid_mode!r}")
        if self.T < 2:
            raise InvalidConfig("T must be >= 2")
        if self.d < 1 or self.d > self.T // 2:
            raise InvalidConfig(f"d must lie in [1, T/2={self.T // 2}], got {self.d}")
        if self.lam <= 0:
            raise InvalidConfig("lam must be positive")
        if self.particle_velocity not in ("mean", "centroid"):
            raise InvalidConfig(f"particle_velocity must be 'mean' or 'centroid', got {self.particle_velocity!r}")
        if self.top_s < 1:
            raise InvalidConfig("top_s must be >= 1")
        if self.n_pool < 1:
            raise InvalidConfig("n_pool must be >= 1")

    # -- construction ----------------------------------------------------------
    @classmethod
    def for_profile(cls, name: str = "umn", **overrides) -> "Config":
        if name not in PROFILES:
            raise InvalidConfig(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(profile=name, **{**PROFILES[name], **overrides})

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls, f.name)) for f in fields(cls)}

    @classmethod
    def coerce(cls, key: str, raw) -> object:
        types = cls.field_types()
        if key not in types:
            raise InvalidConfig(f"unknown config key {key!r}")
        t = types[key]
        try:
            if t is bool:
                if isinstance(raw, bool):
                    return raw
                s = str(raw).strip().lower()
                if s in ("1", "true", "yes", "on"):
                    return True
                if s in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            if t is int:
                return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
            return t(raw)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {key}: {raw!r}") from exc

    @classmethod
    def resolve(cls, profile: str | None = None, path=None, overrides: dict | None = None) -> "Config":
        """Profile defaults, then a key=value file, then explicit overrides."""
        values: dict = {}
        file_values = parse_keyvalue(Path(path).read_text()) if path else {}
        name = profile or file_values.get("profile") or "umn"
        if name not in PROFILES:
            raise InvalidConfig(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        values.update(PROFILES[name])
        values["profile"] = name
        for key, raw in file_values.items():
            if key == "profile":
                continue
            values[key] = cls.coerce(key, raw)
        for key, raw in (overrides or {}).items():
            if raw is not None:
                values[key] = cls.coerce(key, raw)
        return cls(**values)

    def with_(self, **changes) -> "Config":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())

    # -- derived objects --------------------------------------------------------
    def grid(self, width: int, height: int) -> GridSpec:
        if self.grid_mode == "size":
            return make_block_grid(width, height, self.block)
        return make_grid(width, height, self.b)

    def interaction(self, grid: GridSpec) -> InteractionParams:
        radius = self.radius if self.radius > 0 else min(grid.cell_width, grid.cell_height) / 2.0
        return InteractionParams.from_seconds(self.k, self.tau0, self.fps, radius, self.tau_min,
                                              self.tau_max_factor, self.cutoff if self.cutoff > 0 else None,
                                              self.stationary_interacts,
                                              self.max_force if self.max_force > 0 else None)

    def training(self) -> TrainingParams:
        return TrainingParams(lam=self.lam, d=self.d, s_max=self.s_max, epochs=self.epochs,
                              seed=self.seed, coverage=self.coverage, restarts=self.restarts,
                              trim=self.trim)

    @property
    def global_minimum(self) -> int:
        return self.n_pool if self.min_global_words < 0 else self.min_global_words

    @property
    def clip_stride(self) -> int:
        return self.stride if self.stride > 0 else self.T

    def workers(self) -> int:
        n = self.threads
        if n < 0:
            try:
                n = int(os.environ.get(THREADS_ENV, "1"))
            except ValueError:
                raise InvalidConfig(f"{THREADS_ENV} must be an integer") from None
        if n == 0:
            n = os.cpu_count() or 1
        return max(1, n)

    def model_keys(self) -> dict:
        """Settings that must agree between training and detection."""
        return {k: getattr(self, k) for k in ("grid_mode", "b", "block", "top_s", "particle_velocity", "k", "tau0", "fps",
                                              "tau_min", "tau_max_factor", "radius", "cutoff",
                                              "stationary_interacts", "max_force", "T",
                                              "stride", "normalize")}
