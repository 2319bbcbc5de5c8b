"""ROC/AUC, orientation, operating-point choice and repeated-seed stability."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CasvaeError, DomainError


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf (nothing predicted positive)
    n_pos: int
    n_neg: int

    def __len__(self) -> int:
        return len(self.fpr)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def _check_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DomainError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise DomainError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise DomainError("both classes must be present")
    return scores, labels.astype(np.int64), n_pos, len(labels) - n_pos


def roc_curve(scores, labels) -> RocCurve:
    """Sweep thresholds over distinct scores, descending; ties share one vertex.

    A sample is predicted positive when ``score >= threshold``.
    """
    scores, labels, n_pos, n_neg = _check_labels(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(1 - y)[last_of_group]
    return RocCurve(np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos],
                    np.r_[np.inf, s[last_of_group]], n_pos, n_neg)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area; equals P(s+ > s-) + P(s+ = s-) / 2."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2))


def auc_score(scores, labels) -> float:
    return auc(roc_curve(scores, labels))


def orient(scores, labels) -> tuple[float, bool]:
    """``(max(a, 1 - a), flipped)``; an exact 0.5 is reported unflipped."""
    a = auc_score(scores, labels)
    return (1 - a, True) if a < 0.5 else (a, False)


def best_threshold(curve: RocCurve) -> tuple[float, float, float]:
    """Vertex closest to (0, 1); ties go to the higher tpr."""
    d = np.hypot(curve.fpr, 1 - curve.tpr)
    best = np.flatnonzero(d == d.min())
    i = best[np.argmax(curve.tpr[best])]
    return float(curve.thresholds[i]), float(curve.fpr[i]), float(curve.tpr[i])


@dataclass
class SeedResult:
    auc: float
    flipped: bool = False


@dataclass
class StabilityReport:
    seeds: list[int]
    aucs: list[float]
    flipped: list[bool]
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def highest(self) -> float:
        return float(np.max(self.aucs))

    @property
    def lowest(self) -> float:
        return float(np.min(self.aucs))

    @property
    def spread(self) -> float:
        return self.highest - self.lowest


class SeedFailure(CasvaeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"seed {seed} failed: {cause}")
        self.seed = seed


def stability(run_fn: Callable[[int], object], seeds: Sequence[int],
              continue_on_error: bool = False) -> StabilityReport:
    """Run ``run_fn(seed)`` for each seed and aggregate oriented AUCs.

    ``run_fn`` returns either a ``SeedResult`` or a ``(scores, labels)`` pair.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise DomainError("stability needs at least 2 seeds")
    results: dict[int, SeedResult] = {}
    failures: dict[int, str] = {}
    for seed in seeds:
        try:
            out = run_fn(seed)
        except Exception as exc:
            if not continue_on_error:
                raise SeedFailure(seed, exc) from exc
            failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        if not isinstance(out, SeedResult):
            out = SeedResult(*orient(*out))
        results[seed] = out
    ok = [s for s in seeds if s in results]
    if not ok:
        raise DomainError("every seed failed")
    return StabilityReport(ok, [results[s].auc for s in ok], [results[s].flipped for s in ok], failures)


# -- CSV export ------------------------------------------------------------------

def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for f, t, th in curve.points():
            w.writerow([repr(th), repr(f), repr(t)])


def read_roc_csv(path: str | Path) -> list[tuple[float, float, float]]:
    """Rows as ``(threshold, fpr, tpr)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["threshold"]), float(r["fpr"]), float(r["tpr"])) for r in rows]


def write_stability_csv(report: StabilityReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "auc", "flipped"])
        for s, a, f in zip(report.seeds, report.aucs, report.flipped):
            w.writerow([s, repr(a), int(f)])


def export_results(result: RocCurve | StabilityReport, path: str | Path) -> None:
    if isinstance(result, RocCurve):
        write_roc_csv(result, path)
    else:
        write_stability_csv(result, path)
