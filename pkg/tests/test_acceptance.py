"""Acceptance criteria, one test each.

Every test prints a single ``criterion N PASS|FAIL`` line (also repeated in the
terminal summary) before asserting, so a failing criterion still reports its
measured values.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from basinkit import checkpoint as ck
from basinkit import cli, ensemble, landscape, nn, pipeline
from basinkit.config import default_config
from basinkit.ensemble import PredictionMatrix
from basinkit.metrics import pair_counts, roc_auc
from basinkit.nn import Architecture, Batch
from conftest import ACCEPTANCE, FIXTURE_SEEDS, bundled_fixture

DESK_POOL = 10  # models per lineage in the bundled desk config


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[n] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


def test_criterion_01_ensemble_mean_exact(report):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    probs = rng.random((90, 133))
    worst = 0.0
    for _ in range(100):
        idx = rng.integers(0, 90, size=int(rng.integers(1, 61)))
        got = ensemble.ensemble_predict(probs[idx])
        for j in range(probs.shape[1]):
            s = 0.0
            for i in idx:
                s += float(probs[i, j])
            worst = max(worst, abs(got[j] - s / len(idx)))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-15 and elapsed < 1.0,
           f"ensemble mean vs loop oracle on 100 subsets, max abs err {worst:.2e} (<= 1e-15), {elapsed:.2f} s (< 1 s)")


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_02_auc_oracle(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        labels[: 2] = [0, 1]
        rng.shuffle(labels)
        scores = rng.integers(0, int(rng.integers(2, 15)), size=n) / 9.0  # coarse grid forces ties
        want = brute_auc(scores.tolist(), labels.tolist())
        c, t, p, q = pair_counts(scores, labels)
        mismatches += roc_auc(scores, labels) != float(want) or Fraction(2 * c + t, 2 * p * q) != want
    elapsed = time.perf_counter() - start
    report(2, mismatches == 0 and elapsed < 5.0,
           f"rank AUC vs pair enumeration on 200 tied instances, {mismatches} mismatches, {elapsed:.2f} s (< 5 s)")


def test_criterion_03_gradients(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    h = 1e-4
    checked = worst = 0
    while checked < 50:
        d = int(rng.integers(1, 7))
        hidden = tuple(int(k) for k in rng.integers(1, 7, size=rng.integers(1, 3)))
        act = ("relu", "tanh")[checked % 2]
        arch = Architecture(d, hidden, act)
        w = rng.normal(0, 0.8, size=arch.n_params)
        m = int(rng.integers(2, 10))
        batch = Batch(rng.normal(size=(m, d)), rng.integers(0, 2, size=m), rng.normal(size=m))
        if act == "relu" and kink_margin(arch, w, batch.features) < 10 * h:
            continue  # finite differences straddle a relu kink; not a valid comparison point
        for kind in nn.LOSSES:
            g = nn.gradient(arch, w, batch, kind)
            fd = np.empty_like(w)
            for i in range(w.size):
                up, dn = w.copy(), w.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (nn.loss(arch, up, batch, kind) - nn.loss(arch, dn, batch, kind)) / (2 * h)
            rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)
            worst = max(worst, float(rel.max()))
        checked += 1
    elapsed = time.perf_counter() - start
    report(3, worst <= 1e-4 and elapsed < 30,
           f"analytic vs central FD (h=1e-4) on 50 cases x 2 losses, max rel err {worst:.2e} (<= 1e-4), "
           f"{elapsed:.1f} s (< 30 s)")


def kink_margin(arch, w, x):
    h = x
    margin = np.inf
    layers = nn.unflatten(arch, w)
    for W, b in layers[:-1]:
        z = h @ W + b
        margin = min(margin, float(np.abs(z).min()))
        h = np.maximum(z, 0)
    return margin


def de_curves(seed):
    cfg, split, run = bundled_fixture(seed)
    out = {}
    for lineage, pool in (("TL", run.tl), ("RI", run.ri)):
        pm = pipeline.prediction_matrix(pool.last, split.test)
        out[lineage] = ensemble.bootstrap_de_curve(pm, cfg.ensemble.t_grid, 1000, cfg.ensemble.seed, label=lineage)
    return out


def test_criterion_04_variance_decay(report):
    start = time.perf_counter()
    curves = de_curves(0)
    parts, ok = [], True
    for lineage, c in curves.items():
        noninc = bool(np.all(np.diff(c.std_auc) <= 0))
        m10 = c.mean_auc[c.t_grid.index(10)]
        ok &= noninc and m10 > c.baseline_mean
        parts.append(f"{lineage} std {c.std_auc[0]:.4f}->{c.std_auc[-1]:.4f} non-increasing={noninc}, "
                     f"T10 {m10:.4f} vs no-DE {c.baseline_mean:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    report(4, ok, "30-model pools, P=1000: " + "; ".join(parts) + f"; {elapsed:.0f} s incl. training (< 600 s)")


def test_criterion_05_plateau(report):
    passes, parts = 0, []
    for seed in FIXTURE_SEEDS:
        ok = True
        cells = []
        for lineage, c in de_curves(seed).items():
            m = dict(zip(c.t_grid, c.mean_auc))
            t_star = ensemble.plateau_t(c, 0.2).t_star
            early, late = m[10] - c.baseline_mean, m[40] - m[10]
            ok &= t_star <= 10 and late < early
            cells.append(f"{lineage} T*={t_star} gain {early:+.4f}/{late:+.4f}")
        passes += ok
        parts.append(f"seed {seed} " + ", ".join(cells))
    report(5, passes >= 4, f"T*<=10 and gain(10->40) < gain(no-DE->10) for both lineages on {passes}/5 seeds "
                           f"(need >= 4): " + "; ".join(parts))


SCENARIO_REPORTS = {}


def scenario_report(seed):
    if seed not in SCENARIO_REPORTS:
        cfg, split, run = bundled_fixture(seed)
        SCENARIO_REPORTS[seed] = landscape.run_scenarios(
            run.tl.pairs[:DESK_POOL], run.ri.pairs[:DESK_POOL], split.test.batch,
            cfg.landscape.pairs_per_scenario, cfg.landscape.seed, cfg.landscape.n_lambda)
    return SCENARIO_REPORTS[seed]


def test_criterion_06_basins(report):
    start = time.perf_counter()
    passes, parts = 0, []
    for seed in FIXTURE_SEEDS:
        rep = scenario_report(seed)
        med = rep.medians
        pairs = min(len(rep.curves["TL_TL"]), len(rep.curves["RI_RI"]))
        ok = pairs >= 10 and med["TL_TL"] <= 0.02 and med["RI_RI"] > med["TL_TL"] and med["TL_TLstar"] <= 0.02
        passes += ok
        parts.append(f"seed {seed} TL_TL {med['TL_TL']:.4f} RI_RI {med['RI_RI']:.4f} "
                     f"TL_TLstar {med['TL_TLstar']:.4f}")
    elapsed = time.perf_counter() - start
    report(6, passes >= 4 and elapsed < 900,
           f"median TL_TL <= 0.02 < RI_RI and TL_TLstar <= 0.02 with 10 pairs each on {passes}/5 seeds "
           f"(need >= 4): " + "; ".join(parts) + f"; {elapsed:.0f} s (< 900 s)")


def test_criterion_07_endpoint_identity(report):
    checked = bad = 0
    for seed in FIXTURE_SEEDS:
        cfg, split, run = bundled_fixture(seed)
        batch = split.test.batch
        refs = {p.ref: p for pair in run.tl.pairs + run.ri.pairs for p in pair}
        for curves in scenario_report(seed).curves.values():
            for c in curves:
                a, b = (refs[r] for r in c.endpoints)
                bad += c.auc[0] != landscape.standalone_auc(a, batch) or c.auc[-1] != landscape.standalone_auc(b, batch)
                checked += 1
    flat = []
    _, split, run = bundled_fixture(0)
    for c in run.tl.last[:3] + run.ri.last[:3]:
        flat.append(landscape.barrier_curve(c, c, split.test.batch).barrier_height)
    report(7, bad == 0 and all(h == 0.0 for h in flat),
           f"{checked} curves with bitwise endpoint AUCs ({bad} mismatches); "
           f"identical-checkpoint heights {sorted(set(flat))}")


def test_criterion_08_inverse_sqrt_scaling(report):
    rng = np.random.default_rng(8)
    pm = PredictionMatrix(rng.random((90, 300)), np.r_[0, 1, rng.integers(0, 2, size=298)])
    grid = ensemble.DEFAULT_T_GRID
    got = ensemble.bootstrap_prediction_std(pm, grid, p=1000, seed=8)
    expected = pm.probs.std(axis=0).mean() / np.sqrt(grid)
    dev = np.abs(got / expected - 1)
    # scaling shape alone, independent of the pool std: std(T) * sqrt(T) stays constant
    shape = np.abs(got * np.sqrt(grid) / (got[0] * np.sqrt(grid[0])) - 1)
    report(8, dev.max() < 0.10 and shape.max() < 0.10,
           f"i.i.d. rows, T in {grid[0]}..{grid[-1]}: max deviation from sigma/sqrt(T) {dev.max():.3f}, "
           f"from T=2 scaling {shape.max():.3f} (< 0.10)")


def test_criterion_09_persistence(report, tmp_path):
    _, _, run = bundled_fixture(0)
    ckpts = [c for pair in run.tl.pairs[:5] + run.ri.pairs[:5] for c in pair]
    lossless = 0
    for i, c in enumerate(ckpts):
        path = tmp_path / f"{i}.bpck"
        ck.save_checkpoint(c, path)
        back = ck.load_checkpoint(path)
        lossless += (back.weights.tobytes() == c.weights.tobytes() and back.arch == c.arch
                     and back.lineage == c.lineage and back.epoch == c.epoch and back.tag == c.tag
                     and back.val_auc_at_save == c.val_auc_at_save and back.task_id == c.task_id
                     and back.train_config_digest == c.train_config_digest and back.model_id == c.model_id)
    blob = ck.to_bytes(ckpts[0])
    flipped = bytearray(blob)
    flipped[-8] ^= 0x40
    wrong_version = bytearray(blob)
    wrong_version[4:8] = (999).to_bytes(4, "little")
    cases = {
        "checksum": (bytes(flipped), ck.ChecksumError),
        "version": (bytes(wrong_version), ck.VersionError),
        "magic": (b"ABCD" + blob[4:], ck.BadMagicError),
        "truncated": (blob[: len(blob) // 2], ck.TruncatedError),
    }
    rejected = []
    for name, (raw, err) in cases.items():
        try:
            ck.from_bytes(raw)
        except err:
            rejected.append(name)
        except ck.CheckpointError:
            pass
    report(9, lossless == 20 and len(ckpts) == 20 and len(rejected) == 4,
           f"{lossless}/20 fixture checkpoints round-trip bitwise; corrupt files rejected with the right "
           f"category: {', '.join(rejected)}")


def test_criterion_10_full_determinism(report, tmp_path):
    cfg = default_config()
    timings, trees = [], []
    for k in range(2):
        out = tmp_path / f"run{k}"
        start = time.perf_counter()
        cli.cmd_full(cfg, out)
        timings.append(time.perf_counter() - start)
        trees.append({str(p.relative_to(out)): p.read_bytes()
                      for pat in ("*.csv", "*.svg") for p in sorted(out.rglob(pat))})
    same = trees[0] == trees[1]
    n_svg = sum(k.endswith(".svg") for k in trees[0])
    report(10, same and len(trees[0]) > 0 and max(timings) < 600,
           f"desk cmd_full twice: {len(trees[0])} CSV/SVG files ({n_svg} SVG) byte-identical={same}; "
           f"{timings[0]:.0f} s and {timings[1]:.0f} s per run (< 600 s)")
