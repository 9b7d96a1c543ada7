"""Weight-space linear interpolation, barrier curves and the four pairing scenarios."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .metrics import roc_auc
from .nn import Batch
from .train import ModelCheckpoint

N_LAMBDA = 30
SCENARIOS = ("TL_TL", "RI_RI", "TL_TLstar", "RI_RIstar")


class ScenarioError(ValueError):
    pass


def lambda_grid(n: int = N_LAMBDA) -> np.ndarray:
    """``n`` points spaced 1/(n-1) from 0 to 1, built so that ``1 - g[k] == g[n-1-k]`` exactly.

    The upper half is ``k / (n-1)``; the lower half is ``1 - upper``, which is
    exact (Sterbenz), so reversing a curve's endpoints maps the grid onto itself
    bitwise.
    """
    if n < 2:
        raise ValueError("need at least 2 interpolation points")
    k = np.arange(n)
    g = k / (n - 1)
    upper = 2 * k >= n - 1
    g[~upper] = 1.0 - g[n - 1 - k[~upper]]
    return g


def interpolate_weights(w1: np.ndarray, w2: np.ndarray, lam: float) -> np.ndarray:
    """``(1 - lam) * w1 + lam * w2``; the endpoints are returned untouched."""
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    if w1.shape != w2.shape:
        raise ValueError(f"weight vectors differ in shape: {w1.shape} vs {w2.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return w1.copy()
    if lam == 1.0:
        return w2.copy()
    mixed = (1.0 - lam) * w1.astype(np.float64) + lam * w2.astype(np.float64)
    return mixed.astype(w1.dtype)


@dataclass
class BarrierCurve:
    lambdas: np.ndarray
    auc: np.ndarray
    loss: np.ndarray
    endpoints: tuple[str, str]
    scenario: str = "custom"
    barrier_height: float = 0.0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "auc", "bce_loss"])
            for lam, a, l in zip(self.lambdas, self.auc, self.loss):
                w.writerow([f"{lam:.10f}", f"{a:.10f}", f"{l:.10f}"])


def barrier_height(curve: BarrierCurve | tuple) -> float:
    """Largest drop below the straight line joining the endpoint AUCs, floored at 0."""
    if isinstance(curve, BarrierCurve):
        lambdas, auc = curve.lambdas, curve.auc
    else:
        lambdas, auc = curve
    lambdas = np.asarray(lambdas, dtype=np.float64)
    auc = np.asarray(auc, dtype=np.float64)
    # a + lam * (b - a) is exact when a == b, so flat curves give exactly 0
    linear = auc[0] + lambdas * (auc[-1] - auc[0])
    linear[0], linear[-1] = auc[0], auc[-1]
    return max(0.0, float(np.max(linear - auc)))


def _compatible(c1: ModelCheckpoint, c2: ModelCheckpoint):
    if c1.arch != c2.arch:
        raise ValueError(f"{c1.ref} and {c2.ref} have different architectures")


def standalone_auc(c: ModelCheckpoint, batch: Batch) -> float:
    return roc_auc(nn.forward(c.arch, c.weights, batch), batch.labels)


def barrier_curve(c1: ModelCheckpoint, c2: ModelCheckpoint, batch: Batch, n_lambda: int = N_LAMBDA,
                  scenario: str = "custom") -> BarrierCurve:
    _compatible(c1, c2)
    lambdas = lambda_grid(n_lambda)
    aucs, losses = [], []
    for lam in lambdas:
        w = interpolate_weights(c1.weights, c2.weights, float(lam))
        p = nn.forward(c1.arch, w, batch)
        aucs.append(roc_auc(p, batch.labels))
        losses.append(nn.loss_bce(p, batch.labels))
    curve = BarrierCurve(lambdas, np.array(aucs), np.array(losses), (c1.ref, c2.ref), scenario)
    curve.barrier_height = barrier_height(curve)
    return curve


@dataclass
class ScenarioReport:
    curves: dict[str, list[BarrierCurve]] = field(default_factory=dict)

    def heights(self, scenario: str) -> list[float]:
        return [c.barrier_height for c in self.curves[scenario]]

    def median(self, scenario: str) -> float:
        return float(np.median(self.heights(scenario)))

    @property
    def medians(self) -> dict[str, float]:
        return {s: self.median(s) for s in self.curves}

    def write(self, out_dir) -> None:
        """One CSV per curve under ``<scenario>/`` plus ``barrier_summary.csv``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "barrier_summary.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "pair", "endpoint_a", "endpoint_b", "barrier_height"])
            for scenario, curves in self.curves.items():
                sub = out_dir / scenario
                sub.mkdir(exist_ok=True)
                for i, c in enumerate(curves):
                    c.write_csv(sub / f"pair_{i:03d}.csv")
                    w.writerow([scenario, i, c.endpoints[0], c.endpoints[1], f"{c.barrier_height:.10f}"])
        with (out_dir / "barrier_medians.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "n_pairs", "median_barrier_height"])
            for scenario in self.curves:
                w.writerow([scenario, len(self.curves[scenario]), f"{self.median(scenario):.10f}"])


def _sample(rng, candidates, k, scenario):
    if len(candidates) < k:
        raise ScenarioError(f"{scenario}: {k} pairs requested but only {len(candidates)} available")
    pick = np.sort(rng.choice(len(candidates), size=k, replace=False))
    return [candidates[i] for i in pick]


def _cross_pairs(pairs, key=lambda c: None):
    lasts = [p[0] for p in pairs]
    return [(a, b) for a, b in itertools.combinations(lasts, 2) if key(a) == key(b)]


def run_scenarios(tl_pool, ri_pool, batch: Batch, pairs_per_scenario: int = 10, seed: int = 0,
                  n_lambda: int = N_LAMBDA) -> ScenarioReport:
    """Barrier curves for TL_TL, RI_RI, TL_TLstar and RI_RIstar.

    ``tl_pool`` and ``ri_pool`` are lists of ``(last, best)`` checkpoint pairs.
    Cross-model scenarios pair distinct last-epoch checkpoints (TL pairs must
    share a pretrain id); the star scenarios pair a model's last checkpoint with
    its own best one.  Pairs are drawn without replacement.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 29]))
    plans = {}
    for scenario, pool, key in (("TL_TL", tl_pool, lambda c: c.lineage.pretrain_id),
                                ("RI_RI", ri_pool, lambda c: None)):
        if len(pool) < 2:
            raise ScenarioError(f"{scenario}: needs at least 2 models, got {len(pool)}")
        plans[scenario] = _sample(rng, _cross_pairs(pool, key), pairs_per_scenario, scenario)
    for scenario, pool in (("TL_TLstar", tl_pool), ("RI_RIstar", ri_pool)):
        if len(pool) < 2:
            raise ScenarioError(f"{scenario}: needs at least 2 models, got {len(pool)}")
        plans[scenario] = _sample(rng, [tuple(p) for p in pool], pairs_per_scenario, scenario)
    for scenario, pairs in plans.items():
        for a, b in pairs:
            if a.task_id != b.task_id:
                raise ScenarioError(f"{scenario}: {a.ref} and {b.ref} belong to different tasks")
    report = ScenarioReport()
    for scenario in SCENARIOS:
        report.curves[scenario] = [barrier_curve(a, b, batch, n_lambda, scenario) for a, b in plans[scenario]]
    return report
