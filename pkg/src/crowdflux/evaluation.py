"""ROC, AUC, equal error rate and localization rate against ground-truth masks.

A frame is predicted abnormal at threshold ``theta`` when some cell of a
clip covering it has reconstruction error ``>= theta``. Sweeping ``theta``
over every distinct score traces the ROC.

Localization uses the coverage rule: a truly abnormal frame only counts as
detected when the cells flagged at ``theta`` cover more than ``coverage`` of
its truth pixels. The operating threshold is the frame-level equal-error
point, and RD is the fraction of abnormal frames localized there.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .advect import GridSpec
from .errors import EmptyTruth

DEFAULT_COVERAGE = 0.40
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class Roc:
    thresholds: np.ndarray  # descending, starting at +inf
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, labels) -> Roc:
    """ROC of ``score >= threshold`` over every distinct score.

    Tied scores move together, so a constant score gives the diagonal.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    P = int(labels.sum())
    N = labels.size - P
    if P == 0:
        raise EmptyTruth("no abnormal frames in the ground truth")
    if N == 0:
        raise EmptyTruth("no normal frames in the ground truth")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]  # end of each tie group
    thresholds = np.r_[math.inf, s[last]]
    tpr = np.r_[0.0, tp[last] / P]
    fpr = np.r_[0.0, fp[last] / N]
    return Roc(thresholds, fpr, tpr)


def auc(roc: Roc) -> float:
    return float(_trapezoid(roc.tpr, roc.fpr))


def eer(roc: Roc) -> tuple[float, int]:
    """Equal error rate by linear interpolation, plus the index of the nearest ROC vertex.

    ``g = fpr - (1 - tpr)`` rises from -1 to 1 along the curve; the crossing
    of zero is interpolated on the straddling segment.
    """
    g = roc.fpr + roc.tpr - 1.0
    k = int(np.flatnonzero(g >= 0)[0])
    if k == 0 or g[k] == 0:
        return float(roc.fpr[k]), k
    g0, g1 = g[k - 1], g[k]
    t = -g0 / (g1 - g0)
    rate = roc.fpr[k - 1] + t * (roc.fpr[k] - roc.fpr[k - 1])
    nearest = k if abs(g1) <= abs(g0) else k - 1
    return float(rate), nearest


# -- frame scores from cell errors -----------------------------------------------------

def frame_cell_errors(records, T: int) -> dict[int, dict[int, float]]:
    """``{frame: {cell: error}}``, taking the largest error over clips covering the frame."""
    out: dict[int, dict[int, float]] = {}
    for r in records:
        for f in range(r.clip_start, r.clip_start + T):
            cells = out.setdefault(f, {})
            prev = cells.get(r.cell_index)
            if prev is None or r.error > prev:
                cells[r.cell_index] = r.error
    return out


def localization_score(cell_errors: Mapping[int, float], truth: np.ndarray, grid: GridSpec,
                       coverage: float = DEFAULT_COVERAGE) -> float:
    """Largest threshold at which the flagged cells cover more than ``coverage`` of ``truth``.

    Returns ``-inf`` when no threshold achieves it.
    """
    labels = grid.label_map()
    total = int(truth.sum())
    if total == 0:
        return -math.inf
    counts = np.bincount(labels[truth], minlength=grid.n)
    cells = np.array(sorted(cell_errors), dtype=int)
    errs = np.array([cell_errors[c] for c in cells], dtype=float)
    order = np.argsort(-errs, kind="stable")
    errs, pix = errs[order], counts[cells[order]]
    cum = np.cumsum(pix)
    last = np.r_[np.flatnonzero(np.diff(errs) != 0), errs.size - 1]
    ok = cum[last] > coverage * total
    if not ok.any():
        return -math.inf
    return float(errs[last[np.argmax(ok)]])


@dataclass
class EvalReport:
    roc: Roc
    auc: float
    eer: float
    rd: float
    threshold: float  # operating threshold at the equal-error point
    fpr_at_threshold: float
    tpr_at_threshold: float
    frames: int
    positives: int
    mode: str = "frame"
    pixel_roc: Roc | None = None
    notes: dict = field(default_factory=dict)

    @property
    def roc_points(self) -> list[tuple[float, float]]:
        return self.roc.points

    def summary(self) -> str:
        return (f"mode={self.mode} frames={self.frames} abnormal={self.positives}\n"
                f"auc={self.auc:.6f} eer={self.eer:.6f} rd={self.rd:.6f}\n"
                f"threshold={self.threshold!r} fpr={self.fpr_at_threshold:.6f} "
                f"tpr={self.tpr_at_threshold:.6f}\n")


def evaluate(records, truth: Mapping[int, np.ndarray], grid: GridSpec, T: int,
             coverage: float = DEFAULT_COVERAGE, mode: str = "frame") -> EvalReport:
    """Frame-level ROC/AUC/EER and the localization rate RD.

    Only frames covered by some clip are scored; every scored frame needs a
    truth mask. With ``mode="pixel"`` the reported ROC, AUC and EER are the
    localization-aware ones (abnormal frames count only when localized).
    """
    if mode not in ("frame", "pixel"):
        raise ValueError("mode must be 'frame' or 'pixel'")
    per_frame = frame_cell_errors(records, T)
    frames = sorted(per_frame)
    missing = [f for f in frames if f not in truth]
    if missing:
        raise EmptyTruth(f"no truth mask for {len(missing)} scored frames (first: {missing[0]})")
    labels = np.array([bool(truth[f].any()) for f in frames])
    score = np.array([max(per_frame[f].values()) for f in frames])
    loc = np.array([localization_score(per_frame[f], truth[f], grid, coverage) if y else s
                    for f, y, s in zip(frames, labels, score)])

    frame_roc = roc_curve(score, labels)
    rate, k = eer(frame_roc)
    theta = float(frame_roc.thresholds[k])
    rd = float((loc[labels] >= theta).mean())
    pixel_roc = roc_curve(loc, labels)
    main = pixel_roc if mode == "pixel" else frame_roc
    if mode == "pixel":
        rate, _ = eer(pixel_roc)
    return EvalReport(main, auc(main), rate, rd, theta, float(frame_roc.fpr[k]), float(frame_roc.tpr[k]),
                      len(frames), int(labels.sum()), mode, pixel_roc)


# -- files -------------------------------------------------------------------------------

def write_eval_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(report.roc.thresholds, report.roc.fpr, report.roc.tpr):
            w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
        fh.write(f"# auc={report.auc!r} eer={report.eer!r} rd={report.rd!r}\n")


def read_eval_csv(path) -> dict:
    """``{"threshold", "fpr", "tpr"}`` arrays plus the trailer values."""
    rows, trailer = [], {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, value = tok.partition("=")
                    trailer[key] = float(value)
            elif not line.startswith("threshold"):
                rows.append([float(x) for x in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return {"threshold": arr[:, 0], "fpr": arr[:, 1], "tpr": arr[:, 2], **trailer}


def merge_reports(paths: Sequence) -> list[dict]:
    out = []
    for p in paths:
        data = read_eval_csv(p)
        out.append({"name": Path(p).stem, "auc": data.get("auc", math.nan),
                    "eer": data.get("eer", math.nan), "rd": data.get("rd", math.nan),
                    "points": len(data["fpr"])})
    return out


def format_report_table(rows: Sequence[dict]) -> str:
    lines = ["name,auc,eer,rd,points"]
    for r in rows:
        lines.append(f"{r['name']},{r['auc']:.6f},{r['eer']:.6f},{r['rd']:.6f},{r['points']}")
    return "\n".join(lines) + "\n"
