"""End-to-end training and detection over a stream of flow fields.

flow -> characteristic particles -> per-cell force magnitudes -> clips ->
visual words -> dictionary group. Detection scores every word of every
clip, feeds accepted words back into the online codebook, and broadcasts
each clip's abnormal cells to the frames it spans.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .advect import GridSpec, advect_frame
from .codebook import GroupDictionary, OnlineCodebook, UpdateStats, load_model, save_model, train_group
from .config import Config
from .errors import InsufficientWords, InvalidConfig, ModelMismatch
from .features import ForceFlowMatrix, build_force_flow, extract_words
from .flow_io import FlowField
from .force import frame_forces
from .pgm import write_pgm

DET_PATTERN = "det_{:06d}.pgm"
RECORD_FIELDS = ("clip_start", "cell", "error", "label", "dict_id")


@dataclass(frozen=True)
class DetectionRecord:
    clip_start: int
    cell_index: int
    error: float
    label: str  # "Normal" | "Abnormal"
    dictionary_id: int | None = None

    @property
    def abnormal(self) -> bool:
        return self.label == "Abnormal"


@dataclass(frozen=True)
class FrameVerdict:
    frame: int
    abnormal_cells: frozenset = frozenset()
    score: float = 0.0  # largest cell error over the clips covering the frame

    @property
    def abnormal(self) -> bool:
        return bool(self.abnormal_cells)


@dataclass
class DetectionResult:
    records: list[DetectionRecord]
    verdicts: list[FrameVerdict]
    grid: GridSpec
    T: int
    group: GroupDictionary
    stats: UpdateStats = field(default_factory=UpdateStats)

    def abnormal_pairs(self) -> set[tuple[int, int]]:
        return {(r.clip_start, r.cell_index) for r in self.records if r.abnormal}


# -- shared front end ----------------------------------------------------------------

def _peek(flows: Iterable[FlowField]) -> tuple[FlowField | None, Iterator[FlowField]]:
    it = iter(flows)
    first = next(it, None)
    if first is None:
        return None, it

    def chain():
        yield first
        yield from it
    return first, chain()


def force_stream(flows: Iterable[FlowField], grid: GridSpec, config: Config,
                 start: int = 0) -> Iterator[np.ndarray]:
    """Per-frame force magnitudes, one value per cell."""
    params = config.interaction(grid)
    for t, flow in enumerate(flows, start=start):
        yield frame_forces(advect_frame(flow, grid, config.top_s, t, config.particle_velocity), params)


def clip_stream(flows: Iterable[FlowField], config: Config, start: int = 0
                ) -> tuple[GridSpec | None, Iterator[ForceFlowMatrix]]:
    first, flows = _peek(flows)
    if first is None:
        return None, iter(())
    grid = config.grid(first.width, first.height)
    forces = force_stream(flows, grid, config, start)
    return grid, build_force_flow(forces, config.T, config.clip_stride, start)


# -- training ------------------------------------------------------------------------

def run_train(flows: Iterable[FlowField], config: Config, out=None, start: int = 0) -> GroupDictionary:
    """Train a dictionary group on normal footage; optionally write the model file."""
    grid, clips = clip_stream(flows, config, start)
    words = [w for m in clips for w in extract_words(m, config.normalize)]
    if not words:
        raise InsufficientWords(f"training needs at least T={config.T} frames")
    group = train_group(words, params=config.training())
    if out is not None:
        save_model(out, group, config.model_keys())
    return group


def check_model(group: GroupDictionary, model_config: dict, config: Config) -> None:
    """Raise :class:`ModelMismatch` if the model was trained under incompatible settings."""
    if group.T != config.T:
        raise ModelMismatch(f"model has T={group.T}, config has T={config.T}")
    expected = config.model_keys()
    for key, raw in model_config.items():
        if key not in expected:
            continue
        try:
            value = Config.coerce(key, raw)
        except InvalidConfig as exc:
            raise ModelMismatch(str(exc)) from None
        if value != expected[key]:
            raise ModelMismatch(f"model was trained with {key}={raw}, config has {expected[key]}")


def load_checked(path, config: Config) -> GroupDictionary:
    group, model_config = load_model(path)
    check_model(group, model_config, config)
    return group


# -- detection -----------------------------------------------------------------------

def run_detect(flows: Iterable[FlowField], group: GroupDictionary, config: Config,
               start: int = 0, frame_count: int | None = None) -> DetectionResult:
    """Score every clip of ``flows`` against ``group`` with online updates.

    ``frame_count`` (when known) makes the verdict list cover trailing frames
    that fall outside every full clip; those frames are reported normal.
    """
    if group.T != config.T:
        raise ModelMismatch(f"model has T={group.T}, config has T={config.T}")
    counted = _Counter(flows)
    grid, clips = clip_stream(counted, config, start)
    online = OnlineCodebook(group, config.n_pool, config.training(), config.delta, config.passes,
                            config.update, config.workers(), config.global_minimum)
    records: list[DetectionRecord] = []
    for matrix in clips:
        words = extract_words(matrix, config.normalize)
        results = online.classify(words)
        for w, r in zip(words, results):
            records.append(DetectionRecord(matrix.clip_start, w.cell_index, r.error, r.label,
                                           r.dictionary_id))
        online.absorb(words, results)
        online.maintain()
    total = frame_count if frame_count is not None else counted.count
    verdicts = frame_verdicts(records, config.T, start, total)
    if grid is None:
        raise InsufficientWords("no flow frames to score")
    return DetectionResult(records, verdicts, grid, config.T, online.group, online.stats)


class _Counter:
    def __init__(self, it):
        self._it = iter(it)
        self.count = 0

    def __iter__(self):
        for x in self._it:
            self.count += 1
            yield x


def frame_verdicts(records: Sequence[DetectionRecord], T: int, start: int = 0,
                   frame_count: int | None = None) -> list[FrameVerdict]:
    """Broadcast clip records to member frames; one verdict per frame."""
    cells: dict[int, set] = {}
    score: dict[int, float] = {}
    end = start
    for r in records:
        for f in range(r.clip_start, r.clip_start + T):
            score[f] = max(score.get(f, 0.0), r.error)
            bucket = cells.setdefault(f, set())
            if r.abnormal:
                bucket.add(r.cell_index)
        end = max(end, r.clip_start + T)
    if frame_count is not None:
        end = max(end, start + frame_count)
    return [FrameVerdict(f, frozenset(cells.get(f, ())), score.get(f, 0.0)) for f in range(start, end)]


# -- outputs -------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_records_csv(path, records: Iterable[DetectionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.clip_start, r.cell_index, _fmt_float(r.error), r.label,
                        "" if r.dictionary_id is None else r.dictionary_id])


def read_records_csv(path) -> list[DetectionRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(RECORD_FIELDS)}")
        for row in reader:
            label = row["label"]
            if label not in ("Normal", "Abnormal"):
                raise ValueError(f"{path}: bad label {label!r}")
            did = row["dict_id"]
            out.append(DetectionRecord(int(row["clip_start"]), int(row["cell"]), float(row["error"]),
                                       label, int(did) if did else None))
    return out


def verdict_mask(verdict: FrameVerdict, grid: GridSpec) -> np.ndarray:
    return grid.cells_mask(verdict.abnormal_cells)


def write_masks(directory, verdicts: Iterable[FrameVerdict], grid: GridSpec) -> int:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = 0
    for v in verdicts:
        write_pgm(directory / DET_PATTERN.format(v.frame), verdict_mask(v, grid))
        n += 1
    return n


def write_detection(out_dir, result: DetectionResult) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_csv(out_dir / "records.csv", result.records)
    masks = write_masks(out_dir / "masks", result.verdicts, result.grid)
    return {"records": len(result.records), "masks": masks,
            "abnormal_frames": sum(v.abnormal for v in result.verdicts)}


def abnormal_rate(records: Sequence[DetectionRecord]) -> float:
    if not records:
        return math.nan
    return sum(r.abnormal for r in records) / len(records)
