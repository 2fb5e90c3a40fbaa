"""Labeled-fraction sweep comparing supervised NB with semi-supervised NB-SEM."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fusion import FeatureSet, fit_semisupervised, fit_supervised, posterior
from .metrics import average_precision, macro_f1
from .simulate import ScenarioConfig, sample_feature_set

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.02, 0.20, 0.80)
METHODS = ("NB", "NB-SEM")
TEST_STREAM_OFFSET = 1_000_000
CSV_FIELDS = ("fraction", "method", "f1_mean", "f1_std", "ap_mean", "ap_std", "n_seeds")


@dataclass(frozen=True)
class SweepSettings:
    train_size: int = 4500
    test_size: int = 5000
    gain: float = 10.0
    balance: bool = True
    sem_gain: bool = True
    tol: float = 1e-7
    max_iter: int = 500
    robot: int = 0


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    runs: list = field(default_factory=list)

    def row(self, fraction: float, method: str) -> dict:
        for r in self.rows:
            if np.isclose(r["fraction"], fraction) and r["method"] == method:
                return r
        raise KeyError((fraction, method))

    def gap(self, fraction: float, metric: str = "f1_mean") -> float:
        return self.row(fraction, "NB-SEM")[metric] - self.row(fraction, "NB")[metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow(
                [
                    f"{r['fraction']:.4f}",
                    r["method"],
                    f"{r['f1_mean']:.6f}",
                    f"{r['f1_std']:.6f}",
                    f"{r['ap_mean']:.6f}",
                    f"{r['ap_std']:.6f}",
                    r["n_seeds"],
                ]
            )
        return buf.getvalue()


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of the fully observed subset, holding both classes when possible."""
    labels = np.asarray(labels)
    n = len(labels)
    n_fo = int(round(fraction * n))
    if n_fo >= n:
        return np.arange(n)
    chosen = []
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = int(round(fraction * len(pos)))
    if len(pos):
        n_pos = min(max(n_pos, 1), len(pos))
    n_neg = min(max(n_fo - n_pos, 1 if len(neg) else 0), len(neg))
    chosen.append(rng.choice(pos, n_pos, replace=False))
    chosen.append(rng.choice(neg, n_neg, replace=False))
    return np.sort(np.concatenate(chosen))


def split_labels(data: FeatureSet, fraction: float, rng: np.random.Generator):
    idx = stratified_split(data.label, fraction, rng)
    mask = np.zeros(len(data), dtype=bool)
    mask[idx] = True
    return data.subset(mask), data.subset(~mask).without_labels()


def run_cell(scenario: ScenarioConfig, fraction: float, seed: int, settings: SweepSettings = SweepSettings()):
    """One (fraction, seed) experiment; returns per-method metric dicts."""
    attempt = 0
    while True:
        train_seed = seed + attempt * 7919
        train = sample_feature_set(scenario, settings.train_size, train_seed, settings.robot)
        rng = np.random.default_rng([seed, attempt, int(round(fraction * 1e6))])
        labeled, unlabeled = split_labels(train, fraction, rng)
        if {0, 1} <= set(np.unique(labeled.label)):
            break
        log.warning("labeled subset misses a class (fraction=%g, seed=%d); redrawing", fraction, seed)
        attempt += 1
    test = sample_feature_set(scenario, settings.test_size, seed, settings.robot + TEST_STREAM_OFFSET)

    nb = fit_supervised(labeled, gain=settings.gain)
    sem, trace = fit_semisupervised(
        labeled,
        unlabeled,
        tol=settings.tol,
        max_iter=settings.max_iter,
        balance=settings.balance,
        gain=settings.gain if settings.sem_gain else 1.0,
    )
    out = []
    for method, params in (("NB", nb), ("NB-SEM", sem)):
        scores = posterior(params, test)
        out.append(
            {
                "fraction": fraction,
                "seed": seed,
                "method": method,
                "f1": macro_f1(scores, test.label),
                "ap": average_precision(scores, test.label),
                "em_iterations": len(trace) if method == "NB-SEM" else 0,
            }
        )
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(
    scenario: ScenarioConfig,
    fractions=DEFAULT_FRACTIONS,
    seeds=range(20),
    settings: SweepSettings = SweepSettings(),
    n_jobs: int = 1,
) -> SweepResult:
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("a sweep needs at least 2 seeds for seed statistics")
    tasks = [(scenario, float(f), int(s), settings) for f in fractions for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_cell_args, tasks))
    else:
        results = [_run_cell_args(t) for t in tasks]
    runs = [r for cell in results for r in cell]

    rows = []
    for f in fractions:
        for method in METHODS:
            sel = [r for r in runs if np.isclose(r["fraction"], f) and r["method"] == method]
            f1 = np.array([r["f1"] for r in sel])
            ap = np.array([r["ap"] for r in sel])
            rows.append(
                {
                    "fraction": float(f),
                    "method": method,
                    "f1_mean": float(f1.mean()),
                    "f1_std": float(f1.std(ddof=1)),
                    "ap_mean": float(ap.mean()),
                    "ap_std": float(ap.std(ddof=1)),
                    "n_seeds": len(sel),
                }
            )
    return SweepResult(rows, runs)
