"""End-to-end stages behind the CLI: pool training, DE curves, interpolation, summary."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import DataError, DatasetSplit, Partition
from .ensemble import PredictionMatrix, bootstrap_de_curve, plateau_t, write_curve_csv, write_prediction_matrix
from .landscape import ScenarioReport, run_scenarios
from .metrics import mean_std
from .plots import barrier_panels_svg, ensemble_svg
from .train import GammaReport, ModelCheckpoint, PoolResult, pretrain, train_pool, tune_gamma

log = logging.getLogger(__name__)

LINEAGES = ("TL", "RI")
MANIFEST_FIELDS = ["model_id", "lineage", "tag", "epoch", "val_auc", "pretrain_id", "seed", "path"]


def load_dataset(cfg: ExperimentConfig) -> DatasetSplit:
    if cfg.synthetic is not None:
        split = data_mod.generate(cfg.synthetic)
    else:
        samples = data_mod.load_csv(cfg.csv.path, cfg.csv.csv_schema())
        split = data_mod.stratified_split(samples, cfg.csv.ratios, cfg.csv.held_out_sites, cfg.csv.seed)
    d = split.train.batch.features.shape[1]
    if d != cfg.architecture.input_dim:
        raise DataError(f"dataset has {d} features but architecture.input_dim is {cfg.architecture.input_dim}")
    return split


def pretext_data(cfg: ExperimentConfig, split: DatasetSplit) -> tuple[Partition, Partition]:
    """Pretraining cohort and its validation slice (last 10%)."""
    if cfg.synthetic is not None:
        n = cfg.training.pretrain_settings().n_subjects
        cohort = data_mod.generate_pretext(cfg.synthetic, n)
    else:
        cohort = split.train
    n_val = max(1, len(cohort) // 10)
    idx = np.arange(len(cohort))
    return cohort.subset(idx[:-n_val]), cohort.subset(idx[-n_val:])


def eval_partition(cfg: ExperimentConfig, split: DatasetSplit) -> Partition:
    return split.validation if cfg.landscape.partition == "validation" else split.test


@dataclass
class PoolRun:
    tl: PoolResult
    ri: PoolResult
    pretrained: ModelCheckpoint
    pretext_r2: float | None
    gamma_reports: dict[str, GammaReport]


def train_pools(cfg: ExperimentConfig, split: DatasetSplit, n_models: int | None = None) -> PoolRun:
    ts = cfg.training
    base = ts.train_config()
    ps = ts.pretrain_settings()
    pre_train, pre_val = pretext_data(cfg, split)
    pre = pretrain(replace(base, epochs=ps.epochs, seed=ps.seed), pre_train, cfg.architecture, pre_val)
    reports: dict[str, GammaReport] = {}
    gammas = {"TL": base.gamma, "RI": base.gamma}
    if ts.tune_gamma:
        for lineage, init in (("TL", pre.checkpoint), ("RI", None)):
            rep = tune_gamma(base, split, cfg.architecture, ts.gamma_grid, init, cfg.task_id)
            reports[lineage] = rep
            gammas[lineage] = rep.best_gamma
    n = n_models or ts.n_models
    tl = train_pool(replace(base, gamma=gammas["TL"]), split, cfg.architecture, n, pre.checkpoint, cfg.task_id)
    ri = train_pool(replace(base, gamma=gammas["RI"]), split, cfg.architecture, n, None, cfg.task_id)
    return PoolRun(tl, ri, pre.checkpoint, pre.val_r2, reports)


def write_pool(run: PoolRun, out_dir) -> Path:
    """Checkpoints under ``pool/``, the pretrained encoder under ``pretrain/``; returns the manifest path."""
    out_dir = Path(out_dir)
    pool_dir = out_dir / "pool"
    pool_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "pretrain").mkdir(exist_ok=True)
    save_checkpoint(run.pretrained, out_dir / "pretrain" / f"{run.pretrained.model_id}.bpck")
    rows = []
    for lineage, pool in (("TL", run.tl), ("RI", run.ri)):
        for pair in pool.pairs:
            for c in pair:
                name = f"{c.model_id}-{c.tag}.bpck"
                save_checkpoint(c, pool_dir / name)
                rows.append({
                    "model_id": c.model_id, "lineage": lineage, "tag": c.tag, "epoch": c.epoch,
                    "val_auc": repr(float(c.val_auc_at_save)), "pretrain_id": c.lineage.pretrain_id or "",
                    "seed": c.lineage.seed, "path": name,
                })
    manifest = pool_dir / "manifest.csv"
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if run.gamma_reports:
        with (out_dir / "gamma_tuning.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lineage", "gamma", "best_val_auc", "best_epoch", "selected"])
            for lineage, rep in run.gamma_reports.items():
                for r in rep.rows:
                    w.writerow([lineage, r["gamma"], f"{r['best_val_auc']:.10f}", r["best_epoch"],
                                int(r["gamma"] == rep.best_gamma)])
    return manifest


def read_manifest(path, cfg: ExperimentConfig | None = None) -> dict[str, list[tuple[ModelCheckpoint, ModelCheckpoint]]]:
    """Load ``{lineage: [(last, best), ...]}`` in model-id order, validating against ``cfg``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(MANIFEST_FIELDS):
        raise DataError(f"{path}: unexpected manifest columns {sorted(rows[0])}")
    found: dict[str, dict[str, dict[str, ModelCheckpoint]]] = {lin: {} for lin in LINEAGES}
    for r in rows:
        if r["lineage"] not in LINEAGES:
            raise DataError(f"{path}: unknown lineage {r['lineage']!r}")
        c = load_checkpoint(path.parent / r["path"])
        if c.model_id != r["model_id"] or c.tag != r["tag"]:
            raise DataError(f"{path}: {r['path']} holds {c.ref}, manifest says {r['model_id']}:{r['tag']}")
        if cfg is not None and (c.arch != cfg.architecture or c.task_id != cfg.task_id):
            raise DataError(f"{path}: {c.ref} does not match the configured architecture/task")
        found[r["lineage"]].setdefault(c.model_id, {})[c.tag] = c
    pools = {}
    for lineage, models in found.items():
        pairs = []
        for mid in sorted(models):
            tags = models[mid]
            if set(tags) != {"last", "best"}:
                raise DataError(f"{path}: {mid} lacks a last or best checkpoint")
            pairs.append((tags["last"], tags["best"]))
        pools[lineage] = pairs
    return pools


def prediction_matrix(checkpoints: list[ModelCheckpoint], part: Partition) -> PredictionMatrix:
    probs = np.array([nn.forward(c.arch, c.weights, part.batch) for c in checkpoints])
    return PredictionMatrix(probs, part.batch.labels, [c.model_id for c in checkpoints],
                            [str(s) for s in part.subject_ids])


def de_stage(cfg: ExperimentConfig, pools, split: DatasetSplit, out_dir) -> dict:
    """Bootstrap T-DE curve per lineage; CSV + SVG under ``ensemble/``."""
    out = Path(out_dir) / "ensemble"
    out.mkdir(parents=True, exist_ok=True)
    es = cfg.ensemble
    test = split.test
    curves, results = [], {}
    with (out / "de_baseline.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lineage", "n_models", "mean_auc", "std_auc"])
        for lineage in LINEAGES:
            pm = prediction_matrix([p[0] for p in pools.get(lineage, [])], test) if pools.get(lineage) else None
            if pm is None:
                continue
            base_m, base_s = _mean_std_rows(pm)
            w.writerow([lineage, pm.n_models, f"{base_m:.10f}", f"{base_s:.10f}"])
            results[lineage] = {"pm": pm}
    short = [lin for lin in LINEAGES if lin not in results or results[lin]["pm"].n_models < 2]
    if short:
        raise DataError(f"need ≥2 models per lineage for a DE curve; too few for {', '.join(short)}")
    for lineage in LINEAGES:
        pm = results[lineage]["pm"]
        write_prediction_matrix(pm, out / f"predictions_{lineage}.csv", out / "labels.csv")
        curve = bootstrap_de_curve(pm, es.t_grid, es.p, es.seed, es.replace, label=lineage)
        results[lineage].update(curve=curve, plateau=plateau_t(curve, es.delta))
        curves.append(curve)
    write_curve_csv(curves, out / "de_curve.csv")
    with (out / "plateau.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lineage", "delta", "t_star", "no_gain"])
        for lineage in LINEAGES:
            pl = results[lineage]["plateau"]
            w.writerow([lineage, es.delta, pl.t_star, int(pl.no_gain)])
    t_stars = {lin: results[lin]["plateau"].t_star for lin in LINEAGES}
    (out / "de_curve.svg").write_text(ensemble_svg(curves, t_stars), encoding="utf-8")
    return results


def _mean_std_rows(pm: PredictionMatrix):
    return mean_std(pm.row_aucs())


def interpolate_stage(cfg: ExperimentConfig, pools, split: DatasetSplit, out_dir) -> ScenarioReport:
    out = Path(out_dir) / "landscape"
    ls = cfg.landscape
    report = run_scenarios(pools.get("TL", []), pools.get("RI", []), eval_partition(cfg, split).batch,
                           ls.pairs_per_scenario, ls.seed, ls.n_lambda)
    report.write(out)
    (out / "barrier_panels.svg").write_text(barrier_panels_svg(report), encoding="utf-8")
    return report


def write_summary(out_dir, gamma_reports: dict[str, GammaReport], de: dict, report: ScenarioReport) -> str:
    out_dir = Path(out_dir)
    lines = ["# decay-factor tuning (best validation ROC-AUC per gamma)"]
    for lineage, rep in gamma_reports.items():
        cells = ", ".join(f"{r['gamma']:g}: {r['best_val_auc']:.4f}" for r in rep.rows)
        lines.append(f"{lineage}: {cells} -> selected {rep.best_gamma:g}")
    if not gamma_reports:
        lines.append("tuning disabled; configured gamma used")
    lines.append("")
    lines.append("# deep ensemble (test ROC-AUC)")
    rows = [["section", "key", "T", "value_mean", "value_std"]]
    for lineage in LINEAGES:
        c = de[lineage]["curve"]
        pl = de[lineage]["plateau"]
        lines.append(f"{lineage}: no-DE {c.baseline_mean:.4f}±{c.baseline_std:.4f}; "
                     + "; ".join(f"T={t} {m:.4f}±{s:.4f}" for t, m, s in c.rows())
                     + f"; T*={pl.t_star}" + (" (no gain)" if pl.no_gain else ""))
        rows.append(["ensemble", lineage, "no-DE", f"{c.baseline_mean:.10f}", f"{c.baseline_std:.10f}"])
        rows += [["ensemble", lineage, t, f"{m:.10f}", f"{s:.10f}"] for t, m, s in c.rows()]
        rows.append(["plateau", lineage, pl.t_star, "", ""])
    lines.append("")
    lines.append("# interpolation barriers (median over pairs)")
    for scenario, med in report.medians.items():
        lines.append(f"{scenario}: {med:.4f} over {len(report.curves[scenario])} pairs")
        rows.append(["barrier", scenario, "", f"{med:.10f}", ""])
    text = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    with (out_dir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return text
