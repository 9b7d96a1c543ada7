"""Site-structured synthetic cohorts, leave-site-out stratified splits, CSV I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Batch

log = logging.getLogger(__name__)

STRAT_TOLERANCE = 0.10
MAX_ATTEMPTS = 100
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


class DataError(ValueError):
    pass


class StratificationError(DataError):
    pass


@dataclass
class SyntheticConfig:
    n_subjects: int = 1200
    n_sites: int = 10
    input_dim: int = 20
    class_separation: float = 0.5
    site_effect_scale: float = 1.0
    auxiliary_effect_scale: float = 1.0
    label_balance: float = 0.5
    seed: int = 0
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    held_out_sites: int | None = None

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.n_sites < 4:
            raise DataError(f"n_sites must be >= 4 so a site can be held out, got {self.n_sites}")
        if self.n_subjects < 2 * self.n_sites:
            raise DataError("need at least two subjects per site")
        if self.input_dim < 1:
            raise DataError("input_dim must be positive")
        for name in ("class_separation", "site_effect_scale", "auxiliary_effect_scale"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DataError(f"{name} must be finite and >= 0, got {v}")
        if not 0 < self.label_balance < 1:
            raise DataError(f"label_balance must lie in (0, 1), got {self.label_balance}")
        if len(self.ratios) != 3 or min(self.ratios) < 0 or not math.isclose(sum(self.ratios), 1.0):
            raise DataError(f"ratios must be three non-negative fractions summing to 1, got {self.ratios}")


@dataclass
class Partition:
    batch: Batch
    site_ids: np.ndarray
    subject_ids: np.ndarray

    def __post_init__(self):
        self.site_ids = np.asarray(self.site_ids, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        if self.site_ids.shape != (len(self.batch),) or self.subject_ids.shape != (len(self.batch),):
            raise DataError("site/subject ids must have one entry per sample")

    def __len__(self):
        return len(self.batch)

    @property
    def sites(self) -> list[int]:
        return sorted({int(s) for s in self.site_ids})

    def subset(self, idx) -> "Partition":
        idx = np.asarray(idx, dtype=np.int64)
        return Partition(self.batch.subset(idx), self.site_ids[idx], self.subject_ids[idx])


@dataclass
class DatasetSplit:
    train: Partition
    validation: Partition
    test: Partition
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def partitions(self) -> dict[str, Partition]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def violations(self, tolerance: float = STRAT_TOLERANCE) -> list[str]:
        """Human-readable list of broken split invariants (empty when valid)."""
        problems = []
        parts = self.partitions
        names = list(parts)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = np.intersect1d(parts[a].subject_ids, parts[b].subject_ids)
                if shared.size:
                    problems.append(f"{shared.size} subjects shared by {a} and {b}")
        seen = set(self.train.sites) | set(self.validation.sites)
        leaked = seen & set(self.test.sites)
        if leaked:
            problems.append(f"test sites {sorted(leaked)} also appear in train/validation")
        all_labels = np.concatenate([p.batch.labels for p in parts.values()])
        overall = all_labels.mean()
        for name in ("train", "validation"):
            part = parts[name]
            for site in part.sites:
                frac = part.batch.labels[part.site_ids == site].mean()
                if abs(frac - overall) > tolerance + 1e-12:
                    problems.append(
                        f"{name} site {site}: positive fraction {frac:.3f} vs overall {overall:.3f}"
                    )
        return problems


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


@dataclass
class _World:
    class_dir: np.ndarray
    aux_dir: np.ndarray
    site_dirs: np.ndarray


def _world(cfg: SyntheticConfig) -> _World:
    rng = _rng(cfg.seed, 0)
    class_dir = _unit(rng, cfg.input_dim)
    aux_dir = _unit(rng, cfg.input_dim)
    site_dirs = np.stack([_unit(rng, cfg.input_dim) for _ in range(cfg.n_sites)])
    return _World(class_dir, aux_dir, site_dirs)


def _features(cfg, rng, labels, site_dirs, aux, class_dir, aux_dir):
    noise = rng.normal(size=(len(labels), cfg.input_dim))
    signed = 2.0 * labels - 1.0
    return (
        cfg.class_separation * signed[:, None] * class_dir
        + cfg.site_effect_scale * site_dirs
        + cfg.auxiliary_effect_scale * aux[:, None] * aux_dir
        + noise
    )


def _site_cohort(cfg: SyntheticConfig, attempt: int):
    rng = _rng(cfg.seed, 1, attempt)
    site = rng.permutation(np.arange(cfg.n_subjects) % cfg.n_sites)
    labels = np.zeros(cfg.n_subjects, dtype=np.int64)
    for s in range(cfg.n_sites):
        members = np.flatnonzero(site == s)
        n_pos = int(round(cfg.label_balance * members.size))
        if n_pos in (0, members.size):
            return None
        labels[rng.permutation(members)[:n_pos]] = 1
    return rng, site, labels


def generate(cfg: SyntheticConfig) -> DatasetSplit:
    """Draw a cohort and split it with leave-site-out test partitioning.

    Features are ``sep * y * u_class + site_scale * u_site + aux_scale * a * u_aux``
    plus unit Gaussian noise, where ``y`` is the label coded as -1/+1, the ``u``
    directions are unit vectors drawn once from the seed and ``a`` is a
    standard-normal covariate.  Class means therefore sit ``2 * sep`` apart.  Every site gets
    the configured positive fraction exactly (up to rounding).
    """
    world = _world(cfg)
    last_problem = "a site would contain a single class"
    for attempt in range(MAX_ATTEMPTS):
        cohort = _site_cohort(cfg, attempt)
        if cohort is None:
            continue
        rng, site, labels = cohort
        aux = rng.normal(size=cfg.n_subjects)
        x = _features(cfg, rng, labels, world.site_dirs[site], aux, world.class_dir, world.aux_dir)
        samples = Partition(Batch(x, labels, aux), site, np.arange(cfg.n_subjects))
        split = stratified_split(samples, cfg.ratios, cfg.held_out_sites, seed=_derive(cfg.seed, attempt))
        problems = split.violations()
        if not problems:
            split.seed = cfg.seed
            split.metadata["attempt"] = attempt
            return split
        last_problem = problems[0]
    raise StratificationError(f"no valid split after {MAX_ATTEMPTS} attempts: {last_problem}")


def generate_pretext(cfg: SyntheticConfig, n_subjects: int, n_sites: int | None = None) -> Partition:
    """Healthy-only cohort from unseen sites, sharing the task's covariate structure.

    Stands in for the large external population a weakly supervised encoder
    is pretrained on.  Subjects carry only label 0.
    """
    world = _world(cfg)
    n_sites = n_sites or cfg.n_sites
    rng = _rng(cfg.seed, 2)
    site_dirs = np.stack([_unit(rng, cfg.input_dim) for _ in range(n_sites)])
    site = rng.permutation(np.arange(n_subjects) % n_sites)
    labels = np.zeros(n_subjects, dtype=np.int64)
    aux = rng.normal(size=n_subjects)
    x = _features(cfg, rng, labels, site_dirs[site], aux, world.class_dir, world.aux_dir)
    return Partition(Batch(x, labels, aux), site + 1000, np.arange(n_subjects) + 10**6)


def _derive(seed, attempt):
    return int(_rng(seed, 3, attempt).integers(2**31))


def _largest_remainder(weights, total):
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.sum() == 0:
        return np.zeros(len(weights), dtype=np.int64)
    raw = weights / weights.sum() * total
    out = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - out), kind="stable")
    out[order[: total - out.sum()]] += 1
    return out


def stratified_split(samples: Partition, ratios=DEFAULT_RATIOS, held_out_sites: int | None = None,
                     seed: int = 0) -> DatasetSplit:
    """Hold out whole sites for testing, then split the rest into train/validation.

    The train/validation assignment is stratified on (site, label, auxiliary
    quartile): each (site, label) group sends ``round(n * val_share)`` members to
    validation, spread over the quartile cells by largest remainder.
    """
    ratios = tuple(float(r) for r in ratios)
    sites = samples.sites
    if held_out_sites is None:
        held_out_sites = max(1, int(round(ratios[2] * len(sites))))
    if held_out_sites < 1:
        raise DataError("held_out_sites must be >= 1")
    if len(sites) < held_out_sites + 1:
        raise DataError(f"{len(sites)} sites cannot hold out {held_out_sites} and still train")
    rng = _rng(seed, 4)
    test_sites = np.sort(rng.choice(sites, size=held_out_sites, replace=False))
    is_test = np.isin(samples.site_ids, test_sites)
    pool = np.flatnonzero(~is_test)

    val_share = ratios[1] / (ratios[0] + ratios[1]) if ratios[0] + ratios[1] > 0 else 0.0
    aux = samples.batch.auxiliary[pool]
    edges = np.quantile(aux, [0.25, 0.5, 0.75])
    quartile = np.searchsorted(edges, aux, side="right")

    val_idx = []
    for s in np.unique(samples.site_ids[pool]):
        for label in (0, 1):
            in_group = (samples.site_ids[pool] == s) & (samples.batch.labels[pool] == label)
            if not in_group.any():
                continue
            cells = [pool[in_group & (quartile == q)] for q in range(4)]
            n_val = int(round(in_group.sum() * val_share))
            take = _largest_remainder([c.size for c in cells], n_val)
            for cell, k in zip(cells, take):
                if k:
                    val_idx.append(rng.permutation(cell)[:k])
    val_idx = np.sort(np.concatenate(val_idx)) if val_idx else np.array([], dtype=np.int64)
    train_idx = np.setdiff1d(pool, val_idx)
    split = DatasetSplit(
        train=samples.subset(train_idx),
        validation=samples.subset(val_idx),
        test=samples.subset(np.flatnonzero(is_test)),
        seed=seed,
    )
    split.metadata["sites"] = {name: p.sites for name, p in split.partitions.items()}
    hard = [p for p in split.violations(tolerance=1.0)]
    if hard:
        raise DataError("; ".join(hard))
    for p in split.violations():
        log.warning("stratification tolerance exceeded: %s", p)
    return split


@dataclass
class CsvSchema:
    feature_columns: list[str] | None = None  # None: every column named feature_*
    label: str = "label"
    site: str = "site"
    auxiliary: str = "auxiliary"


def load_csv(path, schema: CsvSchema | None = None) -> Partition:
    """Read one sample per row; subject ids are the 0-based row positions."""
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        features = schema.feature_columns
        if features is None:
            features = [c for c in header if c.startswith("feature_")]
            if not features:
                raise DataError(f"{path}: no feature_* columns in header")
        wanted = [*features, schema.label, schema.site, schema.auxiliary]
        for col in wanted:
            if col not in header:
                raise DataError(f"{path}: unknown column {col!r}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(row[p]) for p in pos]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: missing or non-finite value")
            label, site = vals[-3], vals[-2]
            if label not in (0.0, 1.0):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {row[pos[-3]]!r}")
            if site != int(site):
                raise DataError(f"{path}:{lineno}: site must be an integer, got {row[pos[-2]]!r}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    d = len(features)
    batch = Batch(arr[:, :d], arr[:, d].astype(np.int64), arr[:, d + 2])
    return Partition(batch, arr[:, d + 1].astype(np.int64), np.arange(len(rows)))


def export_csv(part: Partition, path) -> None:
    d = part.batch.features.shape[1]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*(f"feature_{i}" for i in range(d)), "label", "site", "auxiliary"])
        for x, y, s, a in zip(part.batch.features, part.batch.labels, part.site_ids, part.batch.auxiliary):
            w.writerow([*(repr(float(v)) for v in x), int(y), int(s), repr(float(a))])
