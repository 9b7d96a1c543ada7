"""Seeded training: step learning-rate decay, best/last checkpoints, pretext pretraining, pools."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .data import DatasetSplit, Partition
from .metrics import roc_auc
from .nn import Architecture, Batch

log = logging.getLogger(__name__)

DEFAULT_GAMMA_GRID = (0.2, 0.4, 0.6, 0.8)
MAX_POOL_FAILURE_RATE = 0.10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "adam" | "sgd_momentum"
    lr0: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gamma: float = 0.5
    decay_period: int = 10
    seed: int = 0
    head_init_scale: float = 0.1  # transfer mode: head drawn at this fraction of the usual init std

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.decay_period < 1:
            raise ValueError("batch_size and decay_period must be positive")
        if not self.head_init_scale >= 0:
            raise ValueError(f"head_init_scale must be >= 0, got {self.head_init_scale}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Lineage:
    kind: str  # "random_init" | "transfer"
    seed: int
    pretrain_id: str | None = None

    @property
    def short(self) -> str:
        return "TL" if self.kind == "transfer" else "RI"


@dataclass
class ModelCheckpoint:
    arch: Architecture
    weights: np.ndarray
    lineage: Lineage
    epoch: int
    tag: str  # "last" | "best"
    val_auc_at_save: float | None
    train_config_digest: str
    task_id: str
    model_id: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        nn.check_weights(self.arch, self.weights)
        if self.tag not in ("last", "best"):
            raise ValueError(f"tag must be 'last' or 'best', got {self.tag!r}")

    @property
    def ref(self) -> str:
        return f"{self.model_id}:{self.tag}"


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.lr)


def lr_at_epoch(lr0: float, gamma: float, epoch: int, period: int = 10) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * gamma ** (epoch // period)


class _Optimizer:
    def __init__(self, cfg: OptimizerConfig, n: int):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
        c = self.cfg
        if c.kind == "sgd_momentum":
            self.m = c.momentum * self.m + g
            return w - lr * self.m
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        return w - lr * m_hat / (np.sqrt(v_hat) + c.eps)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7, epoch]))
    return rng.permutation(n)


def _run(cfg: TrainConfig, arch: Architecture, w0: np.ndarray, batch: Batch, kind: str, evaluate):
    """Minibatch loop; ``evaluate(w32)`` scores each epoch, higher is better.

    Returns ``(last_w32, (best_w32, best_epoch, best_score), history)``; the
    earliest epoch wins ties.
    """
    w = w0.astype(np.float64)
    opt = _Optimizer(cfg.optimizer, w.size)
    history = TrainHistory()
    best = (None, -1, -math.inf)
    n = len(batch)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.optimizer.lr0, cfg.gamma, epoch, cfg.decay_period)
        order = _epoch_order(cfg.seed, epoch, n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            mb = batch.subset(order[start:start + cfg.batch_size])
            batch_loss, grad = nn.loss_and_gradient(arch, w, mb, kind)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite {kind} loss at epoch {epoch}, step {start // cfg.batch_size}")
            total += batch_loss * len(mb)
            w = opt.step(w, grad, lr)
            if not np.isfinite(w).all():
                raise TrainingError(f"weights diverged at epoch {epoch}")
        w32 = w.astype(np.float32)
        score = evaluate(w32)
        history.train_loss.append(total / n)
        history.val_auc.append(score)
        history.lr.append(lr)
        if score > best[2]:
            best = (w32, epoch, score)
    return w32, best, history


def _init(cfg: TrainConfig, arch: Architecture) -> np.ndarray:
    return nn.init_weights(arch, np.random.default_rng(np.random.SeedSequence([cfg.seed, 11])))


def initial_weights(cfg: TrainConfig, arch: Architecture, pretrained: ModelCheckpoint | None = None) -> np.ndarray:
    """Epoch-0 weights: seeded init, or the pretrained encoder plus a small seeded head."""
    if pretrained is None:
        return _init(cfg, arch)
    if pretrained.arch != arch:
        raise ValueError("pretrained checkpoint has a different architecture")
    w0 = pretrained.weights.copy()
    head = nn.head_slice(arch)
    w0[head] = (cfg.head_init_scale * _init(cfg, arch)[head].astype(np.float64) + 0.0).astype(np.float32)  # no -0.0
    return w0


def train_model(cfg: TrainConfig, data: DatasetSplit, arch: Architecture,
                pretrained: ModelCheckpoint | None = None, task_id: str = "task",
                model_id: str = "model"):
    """Train on ``data.train`` and select on validation ROC-AUC.

    ``pretrained`` switches to transfer mode: the run starts from its encoder
    weights with a small freshly drawn head (``cfg.head_init_scale``), so
    ``cfg.seed`` drives only the head init and minibatch order.  Returns ``(last, best, history)``.
    """
    if data.train.batch.features.shape[1] != arch.input_dim:
        raise ValueError(
            f"data has {data.train.batch.features.shape[1]} features, architecture expects {arch.input_dim}"
        )
    w0 = initial_weights(cfg, arch, pretrained)
    if pretrained is not None:
        lineage = Lineage("transfer", cfg.seed, pretrained.model_id)
    else:
        lineage = Lineage("random_init", cfg.seed)
    val = data.validation.batch
    last_w, (best_w, best_epoch, best_auc), history = _run(
        cfg, arch, w0, data.train.batch, "bce",
        lambda w32: roc_auc(nn.forward(arch, w32, val), val.labels),
    )
    digest = cfg.digest()
    common = dict(arch=arch, lineage=lineage, train_config_digest=digest, task_id=task_id, model_id=model_id)
    last = ModelCheckpoint(weights=last_w, epoch=cfg.epochs - 1, tag="last",
                           val_auc_at_save=history.val_auc[-1], **common)
    best = ModelCheckpoint(weights=best_w, epoch=best_epoch, tag="best", val_auc_at_save=best_auc, **common)
    return last, best, history


@dataclass
class PretrainResult:
    checkpoint: ModelCheckpoint
    history: TrainHistory
    val_mse: float | None = None
    val_r2: float | None = None
    aux_variance: float | None = None


def pretrain(cfg: TrainConfig, data: Batch | Partition, arch: Architecture,
             validation: Batch | Partition | None = None, task_id: str = "pretext") -> PretrainResult:
    """Fit the encoder to regress the auxiliary covariate, then drop the regression head.

    The head of ``arch`` serves as the linear regressor during pretraining and is
    zeroed in the emitted checkpoint.  With a validation batch the epoch with the
    lowest validation MSE is kept.
    """
    batch = data.batch if isinstance(data, Partition) else data
    val = validation.batch if isinstance(validation, Partition) else validation
    if val is not None:
        def evaluate(w32):
            return -nn.loss(arch, w32, val, "pretext")
    else:
        def evaluate(w32):
            return -nn.loss(arch, w32, batch, "pretext")
    last_w, (best_w, best_epoch, best_score), history = _run(cfg, arch, _init(cfg, arch), batch, "pretext", evaluate)
    w = (best_w if val is not None else last_w).copy()
    result_mse = r2 = aux_var = None
    if val is not None:
        result_mse = -best_score
        aux_var = float(np.var(val.auxiliary))
        r2 = 1.0 - result_mse / aux_var
    w[nn.head_slice(arch)] = 0.0
    pretrain_id = "pt-" + hashlib.sha256(w.tobytes()).hexdigest()[:12]
    ckpt = ModelCheckpoint(
        arch=arch, weights=w, lineage=Lineage("random_init", cfg.seed), epoch=best_epoch if val is not None else cfg.epochs - 1,
        tag="last", val_auc_at_save=None, train_config_digest=cfg.digest(), task_id=task_id, model_id=pretrain_id,
    )
    return PretrainResult(ckpt, history, result_mse, r2, aux_var)


@dataclass
class GammaReport:
    best_gamma: float
    rows: list[dict]  # gamma, best_val_auc, best_epoch
    failures: list[tuple[float, str]] = field(default_factory=list)


def tune_gamma(cfg: TrainConfig, data: DatasetSplit, arch: Architecture, gamma_grid=DEFAULT_GAMMA_GRID,
               pretrained: ModelCheckpoint | None = None, task_id: str = "task") -> GammaReport:
    """One training per decay factor; the best validation ROC-AUC wins, ties to the smaller factor."""
    grid = sorted(float(g) for g in gamma_grid)
    if not grid:
        raise ValueError("gamma grid is empty")
    rows, failures = [], []
    for g in grid:
        try:
            _, best, _ = train_model(replace(cfg, gamma=g), data, arch, pretrained, task_id)
        except TrainingError as e:
            log.warning("gamma=%g failed: %s", g, e)
            failures.append((g, str(e)))
            continue
        rows.append({"gamma": g, "best_val_auc": best.val_auc_at_save, "best_epoch": best.epoch})
    if not rows:
        raise TrainingError(f"every gamma in {grid} failed")
    top = max(r["best_val_auc"] for r in rows)
    best_gamma = min(r["gamma"] for r in rows if r["best_val_auc"] == top)
    return GammaReport(best_gamma, rows, failures)


@dataclass
class PoolResult:
    pairs: list[tuple[ModelCheckpoint, ModelCheckpoint]]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def last(self) -> list[ModelCheckpoint]:
        return [p[0] for p in self.pairs]

    @property
    def best(self) -> list[ModelCheckpoint]:
        return [p[1] for p in self.pairs]


def _pool_member(args):
    cfg, data, arch, pretrained, task_id, model_id = args
    try:
        last, best, _ = train_model(cfg, data, arch, pretrained, task_id, model_id)
        return last, best, None
    except TrainingError as e:
        return None, None, str(e)


def train_pool(cfg: TrainConfig, data: DatasetSplit, arch: Architecture, n_models: int,
               pretrained: ModelCheckpoint | None = None, task_id: str = "task", n_jobs: int = 1) -> PoolResult:
    """Train ``n_models`` runs with seeds ``cfg.seed + i``, sorted by index.

    Random-init pools vary the initial weights and the minibatch order; transfer
    pools share the encoder of ``pretrained`` and vary the head init and order.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    prefix = "tl" if pretrained is not None else "ri"
    jobs = [
        (replace(cfg, seed=cfg.seed + i), data, arch, pretrained, task_id, f"{prefix}-{i:03d}")
        for i in range(n_models)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_pool_member, jobs))
    else:
        results = [_pool_member(j) for j in jobs]
    pairs, failures = [], []
    for i, (last, best, err) in enumerate(results):
        if err is None:
            pairs.append((last, best))
        else:
            log.warning("pool member %d failed: %s", i, err)
            failures.append((i, err))
    if len(failures) > MAX_POOL_FAILURE_RATE * n_models:
        raise TrainingError(f"{len(failures)} of {n_models} pool runs failed; first: {failures[0][1]}")
    return PoolResult(pairs, failures)
