"""Black-box verification, robustness/uniqueness curves, and ARUC."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import tensor as T
from .fingerprint import FingerprintPair
from .textio import fmt_float

GRID_STEPS = 100
GRID = np.arange(GRID_STEPS + 1) / GRID_STEPS


class BlackBoxModel(Protocol):
    d_in: int
    d_out: int

    def predict(self, batch: np.ndarray) -> np.ndarray: ...


class LocalModel:
    """In-process prediction API around a model (or any predict callable)."""

    def __init__(self, model, d_in: int | None = None, d_out: int | None = None):
        self._predict = model.predict if hasattr(model, "predict") else model
        self.d_in = d_in if d_in is not None else model.d_in
        self.d_out = d_out if d_out is not None else model.d_out

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return np.asarray(self._predict(np.asarray(batch, dtype=np.float64)), dtype=np.float64)


@dataclass
class VerificationResult:
    p_plus: float
    rho: float
    decision: bool
    outputs: np.ndarray | None = None


def verify(pair: FingerprintPair, suspect: BlackBoxModel, rho: float = 0.5,
           keep_outputs: bool = False) -> VerificationResult:
    """Query ``suspect`` on the fingerprint and decide ``p_plus > rho``."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {rho}")
    if (suspect.d_in, suspect.d_out) != (pair.d_in, pair.d_out):
        raise T.ShapeError(f"suspect dims ({suspect.d_in}, {suspect.d_out}) do not match pair "
                           f"({pair.d_in}, {pair.d_out})")
    outputs = np.asarray(suspect.predict(pair.inputs), dtype=np.float64)
    if outputs.shape != (pair.n, pair.d_out):
        raise T.ShapeError(f"suspect returned shape {outputs.shape}, expected {(pair.n, pair.d_out)}")
    _, p_plus = pair.score_outputs(outputs)
    return VerificationResult(p_plus, rho, p_plus > rho, outputs if keep_outputs else None)


def robustness(positive_scores: Sequence[float], rho: float) -> float:
    """Fraction of positive suspects with ``p_plus > rho``."""
    if len(positive_scores) == 0:
        raise ValueError("robustness needs at least one positive suspect")
    s = np.asarray(positive_scores, dtype=np.float64)
    return float(np.count_nonzero(s > rho) / len(s))


def uniqueness(negative_scores: Sequence[float], rho: float) -> float:
    """Fraction of negative suspects with ``p_plus <= rho``."""
    if len(negative_scores) == 0:
        raise ValueError("uniqueness needs at least one negative suspect")
    s = np.asarray(negative_scores, dtype=np.float64)
    return float(np.count_nonzero(s <= rho) / len(s))


def _grid_counts(pos, neg):
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ARUC needs both positive and negative scores")
    tp = len(pos) - np.searchsorted(pos, GRID, side="right")   # p > rho
    tn = np.searchsorted(neg, GRID, side="right")               # p <= rho
    return tp, tn, len(pos), len(neg)


def ru_curves(pos, neg) -> tuple[np.ndarray, np.ndarray]:
    tp, tn, n_pos, n_neg = _grid_counts(pos, neg)
    return tp / n_pos, tn / n_neg


def aruc(pos, neg) -> float:
    """Mean of ``min(R, U)`` over the 101-point grid ``{0, 0.01, ..., 1}``.

    Summed as exact fractions so the result does not depend on float
    summation order.
    """
    tp, tn, n_pos, n_neg = _grid_counts(pos, neg)
    total = sum((min(Fraction(int(a), n_pos), Fraction(int(b), n_neg)) for a, b in zip(tp, tn)),
                Fraction(0))
    return float(total / len(GRID))


def perfect_threshold_exists(pos, neg) -> bool:
    r, u = ru_curves(pos, neg)
    return bool(np.any((r == 1.0) & (u == 1.0)))


def mean_ci(values: Sequence[float], z: float = 1.96) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width; zero width for one run."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(z * v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class SuspectScore:
    id: str
    label: str
    p_plus: float


@dataclass
class RUReport:
    grid: np.ndarray
    robustness: np.ndarray
    uniqueness: np.ndarray
    aruc: float
    scores: list  # SuspectScore, averaged over repetitions
    run_arucs: list = field(default_factory=list)
    ci: float = 0.0

    def check_monotone(self) -> None:
        if np.any(np.diff(self.robustness) > 0):
            raise AssertionError("robustness curve increases along the grid")
        if np.any(np.diff(self.uniqueness) < 0):
            raise AssertionError("uniqueness curve decreases along the grid")

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "ru_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "R", "U", "min"])
            for rho, r, u in zip(self.grid, self.robustness, self.uniqueness):
                w.writerow([fmt_float(rho), fmt_float(r), fmt_float(u), fmt_float(min(r, u))])
        with open(d / "suspects.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["suspect_id", "label", "p_plus"])
            for s in self.scores:
                w.writerow([s.id, s.label, fmt_float(s.p_plus)])
        (d / "summary.txt").write_text(self.summary(), encoding="utf-8")

    def summary(self) -> str:
        n_pos = sum(1 for s in self.scores if s.label == "+")
        lines = [
            f"ARUC {self.aruc:.4f} +/- {self.ci:.4f} (95% CI, normal approx., {len(self.run_arucs)} runs)",
            f"holdout suspects: {n_pos} positive, {len(self.scores) - n_pos} negative",
            "per-run ARUC: " + " ".join(f"{a:.4f}" for a in self.run_arucs),
        ]
        return "\n".join(lines) + "\n"


def score_suspects(pair: FingerprintPair, suspects, adapter=LocalModel) -> list:
    """Verify every ``Suspect`` in manifest order; returns ``SuspectScore`` rows."""
    return [SuspectScore(s.id, s.label, verify(pair, adapter(s.model)).p_plus) for s in suspects]


def split_scores(scores) -> tuple[list, list]:
    return ([s.p_plus for s in scores if s.label == "+"], [s.p_plus for s in scores if s.label == "-"])


def run_benchmark(build_pair: Callable[[int], FingerprintPair], holdout, seeds: Sequence[int],
                  adapter=LocalModel) -> RUReport:
    """Construct a fresh pair per seed and evaluate it on the holdout suspects.

    Curves and per-suspect scores in the report are averaged over runs; the
    headline ARUC is the mean of per-run ARUCs.
    """
    if not any(s.label == "+" for s in holdout) or not any(s.label == "-" for s in holdout):
        raise ValueError("holdout split needs both positive and negative suspects")
    run_arucs, rs, us, per_run = [], [], [], []
    for seed in seeds:
        pair = build_pair(seed)
        scores = score_suspects(pair, holdout, adapter)
        pos, neg = split_scores(scores)
        r, u = ru_curves(pos, neg)
        rs.append(r)
        us.append(u)
        run_arucs.append(aruc(pos, neg))
        per_run.append(scores)
    mean, ci = mean_ci(run_arucs)
    avg = [SuspectScore(s.id, s.label, float(np.mean([run[i].p_plus for run in per_run])))
           for i, s in enumerate(per_run[0])]
    report = RUReport(GRID.copy(), np.mean(rs, axis=0), np.mean(us, axis=0), mean, avg, run_arucs, ci)
    report.check_monotone()
    return report


@dataclass
class SweepPoint:
    value: float
    arucs: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.arucs))


def sweep(evaluate: Callable[[float, int], float], values: Sequence[float], seeds: Sequence[int]) -> list:
    """Mean holdout ARUC per sweep value; ``evaluate(value, seed)`` returns one ARUC."""
    if len(values) < 2:
        raise ValueError("a sweep needs at least two points")
    return [SweepPoint(v, [evaluate(v, s) for s in seeds]) for v in values]


def write_trend(points, path, name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name, "mean_aruc", "ci95", "runs"])
        for p in points:
            m, ci = mean_ci(p.arucs)
            w.writerow([fmt_float(p.value), fmt_float(m), fmt_float(ci), len(p.arucs)])
