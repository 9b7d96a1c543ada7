"""Deep-ensemble averaging and the bootstrap T-DE curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import mean_std, roc_auc, roc_auc_rows

DEFAULT_T_GRID = (2, 3, 5, 10, 15, 20, 30, 40, 50, 60)
DEFAULT_DELTA = 0.2
_CHUNK = 4096


@dataclass
class PredictionMatrix:
    probs: np.ndarray  # (N models, M samples)
    labels: np.ndarray
    model_ids: list[str] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.probs.ndim != 2 or self.probs.shape[1] != self.labels.shape[0]:
            raise ValueError(f"probs {self.probs.shape} do not match {self.labels.shape[0]} labels")
        if len(set(self.labels.tolist())) < 2:
            raise ValueError("labels need both classes for ROC-AUC")
        if np.isnan(self.probs).any() or self.probs.min() < 0 or self.probs.max() > 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if not self.model_ids:
            self.model_ids = [f"m{i:03d}" for i in range(self.probs.shape[0])]
        if not self.sample_ids:
            self.sample_ids = [str(j) for j in range(self.probs.shape[1])]
        if len(self.model_ids) != self.n_models or len(self.sample_ids) != self.n_samples:
            raise ValueError("identifier lists do not match the matrix shape")

    @property
    def n_models(self) -> int:
        return self.probs.shape[0]

    @property
    def n_samples(self) -> int:
        return self.probs.shape[1]

    def row_aucs(self) -> np.ndarray:
        return roc_auc_rows(self.probs, self.labels)


def ensemble_predict(rows) -> np.ndarray:
    """Element-wise mean of the given prediction rows (duplicates allowed)."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[0] == 0:
        raise ValueError("cannot ensemble an empty set of models")
    return np.add.accumulate(rows, axis=0)[-1] / rows.shape[0]


def _mean_of_draws(probs, idx):
    # idx: (K, T) -> (K, M) ensemble predictions, summed in draw order
    acc = probs[idx[:, 0]].copy()
    for t in range(1, idx.shape[1]):
        acc += probs[idx[:, t]]
    return acc / idx.shape[1]


@dataclass
class EnsembleCurve:
    t_grid: list[int]
    mean_auc: list[float]
    std_auc: list[float]
    baseline_mean: float
    baseline_std: float
    p: int
    seed: int
    label: str = ""

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.t_grid, self.t_grid[1:])):
            raise ValueError("T grid must be strictly increasing")

    def rows(self):
        return list(zip(self.t_grid, self.mean_auc, self.std_auc))


def draw_indices(n_models: int, t: int, p: int, seed: int, replace: bool = True) -> np.ndarray:
    """The ``(p, t)`` model-index draws used for ensemble size ``t``.

    Each ``t`` gets its own stream keyed on ``(seed, t)``, generated in one call.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
    if replace:
        return rng.integers(0, n_models, size=(p, t))
    if t > n_models:
        raise ValueError(f"cannot draw {t} distinct models from {n_models}")
    return np.argsort(rng.random((p, n_models)), axis=1)[:, :t]


def bootstrap_de_curve(pm: PredictionMatrix, t_grid=DEFAULT_T_GRID, p: int = 1000, seed: int = 0,
                       replace: bool = True, label: str = "") -> EnsembleCurve:
    """Mean and sample std of T-DE ROC-AUC over ``p`` bootstrap ensembles per T.

    The baseline ("no-DE") is the mean/std of the single-model AUCs.
    """
    t_grid = [int(t) for t in t_grid]
    if not t_grid:
        raise ValueError("T grid is empty")
    if p < 1:
        raise ValueError("p must be >= 1")
    means, stds = [], []
    for t in t_grid:
        idx = draw_indices(pm.n_models, t, p, seed, replace)
        aucs = np.concatenate([
            roc_auc_rows(_mean_of_draws(pm.probs, idx[i:i + _CHUNK]), pm.labels)
            for i in range(0, p, _CHUNK)
        ])
        m, s = mean_std(aucs)
        means.append(m)
        stds.append(s)
    base_m, base_s = mean_std(pm.row_aucs())
    return EnsembleCurve(t_grid, means, stds, base_m, base_s, p, seed, label)


def bootstrap_prediction_std(pm: PredictionMatrix, t_grid=DEFAULT_T_GRID, p: int = 1000, seed: int = 0,
                             replace: bool = True) -> np.ndarray:
    """Per-T spread of the ensemble prediction itself: sample-averaged std over ``p`` draws."""
    out = []
    for t in t_grid:
        idx = draw_indices(pm.n_models, int(t), p, seed, replace)
        preds = _mean_of_draws(pm.probs, idx)
        out.append(float(preds.std(axis=0, ddof=1).mean()) if p > 1 else 0.0)
    return np.array(out)


@dataclass
class Plateau:
    t_star: int
    no_gain: bool = False


def plateau_t(curve: EnsembleCurve, delta: float = DEFAULT_DELTA) -> Plateau:
    """Smallest T whose remaining gain to the grid maximum is below ``delta`` of the total gain."""
    if len(curve.t_grid) < 3:
        raise ValueError("plateau detection needs at least 3 grid points")
    if delta <= 0:
        raise ValueError("delta must be positive")
    top = curve.mean_auc[-1]
    total_gain = top - curve.baseline_mean
    if total_gain <= 0:
        return Plateau(curve.t_grid[0], no_gain=True)
    for t, m in zip(curve.t_grid, curve.mean_auc):
        if top - m < delta * total_gain:
            return Plateau(t)
    return Plateau(curve.t_grid[-1])


def single_auc(pm: PredictionMatrix, row: int) -> float:
    return roc_auc(pm.probs[row], pm.labels)


def write_prediction_matrix(pm: PredictionMatrix, path, labels_path) -> None:
    """Row per model: ``model_id`` then M probabilities; labels go to a second file."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", *pm.sample_ids])
        for mid, row in zip(pm.model_ids, pm.probs):
            w.writerow([mid, *(repr(float(v)) for v in row)])
    with Path(labels_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, y in zip(pm.sample_ids, pm.labels):
            w.writerow([sid, int(y)])


def read_prediction_matrix(path, labels_path) -> PredictionMatrix:
    with Path(labels_path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    sample_ids = [r[0] for r in rows]
    labels = [int(r[1]) for r in rows]
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[1:] != sample_ids:
            raise ValueError("prediction columns do not match the label file's sample ids")
        body = list(reader)
    return PredictionMatrix(
        np.array([[float(v) for v in r[1:]] for r in body]), labels,
        [r[0] for r in body], sample_ids,
    )


def write_curve_csv(curves: list[EnsembleCurve], path) -> None:
    """Columns ``T, mean_auc, std_auc`` (plus a leading ``lineage`` for labelled curves).

    One row per grid point; the no-DE baseline is reported separately.
    """
    multi = len(curves) > 1 or any(c.label for c in curves)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["lineage"] if multi else []) + ["T", "mean_auc", "std_auc"])
        for c in curves:
            for t, m, s in c.rows():
                w.writerow(([c.label] if multi else []) + [t, f"{m:.10f}", f"{s:.10f}"])
