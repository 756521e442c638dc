"""Synthetic crowd scenarios with ground truth.

Three presets:

``normal``
    waypoint walkers only.
``panic``
    walkers until ``t_anomaly``; from then on every agent flees radially from
    the frame centre at ``v_fast``. Every frame from ``t_anomaly`` on is
    abnormal over the whole frame.
``intruder``
    walkers plus one fast agent that enters at ``t_anomaly`` and crosses the
    scene horizontally at ``v_fast``. Ground truth marks the grid cells the
    intruder's disc overlaps.

Agents that leave the frame wrap to the opposite side. Velocities are the
unwrapped per-frame displacement, so flow field ``i`` is exact forward flow
from frame ``i`` to ``i + 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .advect import GridSpec, make_grid
from .errors import IndexOutOfRange, InvalidConfig
from .flow_io import FlowField, write_flow_dir

PRESETS = ("normal", "panic", "intruder")
WALKER, PANIC_RUNNER, FAST_INTRUDER = "waypoint-walker", "panic-runner", "fast-intruder"
GT_PATTERN = "gt_{:06d}.pgm"


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "normal"
    width: int = 320
    height: int = 240
    frames: int = 100
    agents: int = 40
    v_walk: float = 1.0
    agent_radius: float = 4.0
    t_anomaly: int = -1
    seed: int = 0
    v_fast: float = 0.0  # 0 selects 8 * v_walk
    jitter_deg: float = 5.0
    grid: int = 20  # cells per side for cell-level ground truth
    intruder_radius: float = 0.0  # 0 selects agent_radius

    @property
    def fast_speed(self) -> float:
        return self.v_fast if self.v_fast > 0 else 8.0 * self.v_walk

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise InvalidConfig(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.agents < 1:
            raise InvalidConfig("need at least one agent")
        if self.frames < 2:
            raise InvalidConfig("need at least two frames")
        if self.width < 1 or self.height < 1:
            raise InvalidConfig("frame size must be positive")
        if self.agent_radius <= 0:
            raise InvalidConfig("agent_radius must be positive")
        if self.intruder_radius < 0:
            raise InvalidConfig("intruder_radius must be non-negative")
        if self.v_walk < 0:
            raise InvalidConfig("v_walk must be non-negative")
        if not 0 <= self.jitter_deg <= 5.0:
            raise InvalidConfig("heading jitter must lie in [0, 5] degrees per frame")
        if self.preset != "normal":
            if not 0 <= self.t_anomaly < self.frames:
                raise InvalidConfig(f"t_anomaly={self.t_anomaly} outside [0, {self.frames})")
            if self.fast_speed <= self.v_walk:
                raise InvalidConfig("intruder/panic speed must exceed walker speed")
            if self.preset == "intruder" and self.fast_speed < 2 * self.v_walk:
                raise InvalidConfig("fast intruder must move at least twice walker speed")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise InvalidConfig(f"unknown scenario key {key!r}")
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(raw) if not isinstance(default, bool) else _parse_bool(raw)
            except (TypeError, ValueError) as exc:
                raise InvalidConfig(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_mapping(parse_keyvalue(Path(path).read_text()))

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    return str(raw).strip().lower() in ("1", "true", "yes", "on")


def parse_keyvalue(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True, eq=False)
class Scenario:
    """Per-frame agent states plus the anomaly schedule.

    ``positions`` and ``velocities`` have shape (frames, agents, 2); velocity
    ``t`` is the displacement from frame ``t`` to ``t + 1`` (the last row
    repeats the previous one). ``active`` flags agents present in a frame.
    """

    config: ScenarioConfig
    positions: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray
    behaviors: tuple[tuple[str, ...], ...]
    active: np.ndarray
    anomaly_frames: tuple[int, int] | None  # half-open range

    @property
    def width(self) -> int:
        return self.config.width

    @property
    def height(self) -> int:
        return self.config.height

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def gt_grid(self) -> GridSpec:
        b = min(self.config.grid, self.width, self.height)
        return make_grid(self.width, self.height, b)

    def is_abnormal(self, t: int) -> bool:
        return self.anomaly_frames is not None and self.anomaly_frames[0] <= t < self.anomaly_frames[1]

    def truth_mask(self, t: int) -> np.ndarray:
        """Boolean (height, width) ground truth for frame ``t``."""
        if not 0 <= t < self.frame_count:
            raise IndexOutOfRange(f"frame {t} outside [0, {self.frame_count})")
        mask = np.zeros((self.height, self.width), dtype=bool)
        if not self.is_abnormal(t):
            return mask
        if self.config.preset == "panic":
            mask[:] = True
            return mask
        grid = self.gt_grid
        for a in np.flatnonzero(self.active[t]):
            if self.behaviors[t][a] == FAST_INTRUDER:
                disc = _disc_mask(self.width, self.height, self.positions[t, a], self.radii[a])
                mask |= grid.cells_mask(grid.cells_touching(disc))
        return mask


def _disc_mask(width, height, center, radius):
    """Pixels within ``radius`` of ``center``, measured with wrap-around."""
    yy, xx = np.mgrid[0:height, 0:width]
    dx = np.abs(xx - center[0])
    dy = np.abs(yy - center[1])
    dx = np.minimum(dx, width - dx)
    dy = np.minimum(dy, height - dy)
    return dx * dx + dy * dy <= radius * radius


def _rotate(vec, angles):
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * vec[:, 0] - s * vec[:, 1], s * vec[:, 0] + c * vec[:, 1]], axis=1)


def simulate_scenario(config: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Deterministic trajectories for ``config``; ``seed`` overrides ``config.seed``."""
    if seed is not None:
        config = ScenarioConfig(**{**asdict(config), "seed": int(seed)})
    config.validate()
    rng = np.random.default_rng(config.seed)
    W, H, F = config.width, config.height, config.frames
    n_walk = config.agents
    intruder = config.preset == "intruder"
    n = n_walk + (1 if intruder else 0)
    jitter = math.radians(config.jitter_deg)

    pos = np.zeros((F, n, 2))
    vel = np.zeros((F, n, 2))
    active = np.ones((F, n), dtype=bool)
    radii = np.full(n, float(config.agent_radius))
    if intruder and config.intruder_radius > 0:
        radii[n_walk] = config.intruder_radius
    behaviors = []

    p = np.column_stack([rng.uniform(0, W, n_walk), rng.uniform(0, H, n_walk)])
    waypoints = np.column_stack([rng.uniform(0, W, n_walk), rng.uniform(0, H, n_walk)])
    speeds = config.v_walk * rng.uniform(0.6, 1.0, n_walk)
    heading = np.zeros((n_walk, 2))
    panic_dir = None

    ip = np.zeros(2)
    if intruder:
        lane_y = rng.uniform(0.25 * H, 0.75 * H)
        ip = np.array([0.0, lane_y])
        active[: config.t_anomaly, n_walk] = False

    for t in range(F):
        panicking = config.preset == "panic" and t >= config.t_anomaly
        if panicking:
            if panic_dir is None:
                d = p - np.array([W / 2.0, H / 2.0])
                norm = np.hypot(d[:, 0], d[:, 1])
                d[norm == 0] = (1.0, 0.0)
                panic_dir = d / np.hypot(d[:, 0], d[:, 1])[:, None]
            step = _rotate(panic_dir, rng.uniform(-jitter, jitter, n_walk)) * config.fast_speed
            behaviors.append((PANIC_RUNNER,) * n_walk)
        else:
            to_wp = waypoints - p
            dist = np.hypot(to_wp[:, 0], to_wp[:, 1])
            reached = dist < 2.0 * config.agent_radius
            if reached.any():
                k = int(reached.sum())
                waypoints[reached] = np.column_stack([rng.uniform(0, W, k), rng.uniform(0, H, k)])
                to_wp = waypoints - p
                dist = np.hypot(to_wp[:, 0], to_wp[:, 1])
            desired = to_wp / np.maximum(dist, 1e-12)[:, None]
            if t == 0:
                heading = desired
            else:
                # turn toward the waypoint by at most the jitter bound, plus seeded noise
                ang_cur = np.arctan2(heading[:, 1], heading[:, 0])
                ang_des = np.arctan2(desired[:, 1], desired[:, 0])
                turn = (ang_des - ang_cur + np.pi) % (2 * np.pi) - np.pi
                turn = np.clip(turn + rng.uniform(-jitter, jitter, n_walk) * 0.5, -jitter, jitter)
                heading = _rotate(heading, turn)
            step = heading * speeds[:, None]
            behaviors.append((WALKER,) * n_walk + ((FAST_INTRUDER,) if intruder else ()))

        pos[t, :n_walk] = p
        vel[t, :n_walk] = step
        p = np.column_stack([(p[:, 0] + step[:, 0]) % W, (p[:, 1] + step[:, 1]) % H])

        if intruder:
            if t >= config.t_anomaly:
                pos[t, n_walk] = ip
                vel[t, n_walk] = (config.fast_speed, 0.0)
                ip = np.array([(ip[0] + config.fast_speed) % W, ip[1]])
            else:
                pos[t, n_walk] = ip

    if F > 1:
        vel[F - 1] = vel[F - 2]
    anomaly = None if config.preset == "normal" else (config.t_anomaly, F)
    pos.setflags(write=False)
    vel.setflags(write=False)
    active.setflags(write=False)
    return Scenario(config, pos, vel, radii, tuple(behaviors), active, anomaly)


def rasterize_flow(scenario: Scenario, frame_index: int) -> FlowField:
    """Hard-disc splat of every active agent's velocity.

    A pixel within an agent's radius carries that agent's velocity; where
    discs overlap the agent with the nearer centre wins (lower agent index on
    exact ties). Discs wrap across the frame border like the agents do.
    """
    if not 0 <= frame_index < scenario.frame_count - 1:
        raise IndexOutOfRange(f"frame {frame_index} outside [0, {scenario.frame_count - 1})")
    W, H = scenario.width, scenario.height
    u = np.zeros((H, W), dtype=np.float32)
    v = np.zeros((H, W), dtype=np.float32)
    best = np.full((H, W), np.inf)
    t = frame_index
    for a in np.flatnonzero(scenario.active[t]):
        cx, cy = scenario.positions[t, a]
        r = scenario.radii[a]
        vx, vy = scenario.velocities[t, a]
        for ox in (-W, 0, W):
            for oy in (-H, 0, H):
                x, y = cx + ox, cy + oy
                x0, x1 = max(int(math.floor(x - r)), 0), min(int(math.ceil(x + r)), W - 1)
                y0, y1 = max(int(math.floor(y - r)), 0), min(int(math.ceil(y + r)), H - 1)
                if x0 > x1 or y0 > y1:
                    continue
                yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
                d2 = (xx - x) ** 2 + (yy - y) ** 2
                sub = best[y0:y1 + 1, x0:x1 + 1]
                win = (d2 <= r * r) & (d2 < sub)
                sub[win] = d2[win]
                u[y0:y1 + 1, x0:x1 + 1][win] = vx
                v[y0:y1 + 1, x0:x1 + 1][win] = vy
    return FlowField(u, v)


def iter_flows(scenario: Scenario, start: int = 0, stop: int | None = None):
    stop = scenario.frame_count - 1 if stop is None else stop
    for t in range(start, stop):
        yield rasterize_flow(scenario, t)


def write_scenario(scenario: Scenario, out_dir) -> dict:
    """Write ``flow/frame_%06d.flo``, ``gt/gt_%06d.pgm`` and ``scenario.cfg`` under ``out_dir``."""
    from .pgm import write_pgm

    out = Path(out_dir)
    flow_dir = out / "flow"
    gt_dir = out / "gt"
    gt_dir.mkdir(parents=True, exist_ok=True)
    n_flow = write_flow_dir(flow_dir, iter_flows(scenario))
    for t in range(scenario.frame_count):
        write_pgm(gt_dir / GT_PATTERN.format(t), scenario.truth_mask(t))
    (out / "scenario.cfg").write_text(scenario.config.dumps())
    return {"flows": n_flow, "truth": scenario.frame_count, "flow_dir": flow_dir, "gt_dir": gt_dir}
