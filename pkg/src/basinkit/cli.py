"""Command-line entry point: ``basinkit {train-pool,de-curve,interpolate,full,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, PROFILES, default_config, load_config
from .data import DataError
from .landscape import ScenarioError
from .train import TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_IO = 5

log = logging.getLogger("basinkit")


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    cfg = cfg.with_profile(args.profile)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out or cfg.output_dir)
    return cfg, out


def cmd_train_pool(cfg, out: Path):
    split = pipeline.load_dataset(cfg)
    run = pipeline.train_pools(cfg, split)
    manifest = pipeline.write_pool(run, out)
    log.info("wrote %d checkpoints, manifest %s", 2 * (len(run.tl.pairs) + len(run.ri.pairs)), manifest)
    return run, manifest


def _manifest(args, out):
    return Path(args.manifest) if getattr(args, "manifest", None) else out / "pool" / "manifest.csv"


def cmd_de_curve(cfg, manifest: Path, out: Path):
    split = pipeline.load_dataset(cfg)
    pools = pipeline.read_manifest(manifest, cfg)
    return pipeline.de_stage(cfg, pools, split, out)


def cmd_interpolate(cfg, manifest: Path, out: Path):
    split = pipeline.load_dataset(cfg)
    pools = pipeline.read_manifest(manifest, cfg)
    return pipeline.interpolate_stage(cfg, pools, split, out)


def cmd_full(cfg, out: Path) -> str:
    stage = "train-pool"
    try:
        run, manifest = cmd_train_pool(cfg, out)
        stage = "de-curve"
        de = cmd_de_curve(cfg, manifest, out)
        stage = "interpolate"
        report = cmd_interpolate(cfg, manifest, out)
        stage = "summary"
        return pipeline.write_summary(out, run.gamma_reports, de, report)
    except Exception as e:
        out.mkdir(parents=True, exist_ok=True)
        (out / "FAILED").write_text(f"stage: {stage}\nerror: {type(e).__name__}: {e}\n", encoding="utf-8")
        raise


def cmd_inspect(path) -> dict:
    c = load_checkpoint(path)
    info = {
        "model_id": c.model_id,
        "arch": c.arch.to_dict(),
        "n_params": c.arch.n_params,
        "lineage": {"kind": c.lineage.kind, "seed": c.lineage.seed, "pretrain_id": c.lineage.pretrain_id},
        "epoch": c.epoch,
        "tag": c.tag,
        "task_id": c.task_id,
        "val_auc_at_save": c.val_auc_at_save,
        "train_config_digest": c.train_config_digest,
        "weight_l2": float((c.weights.astype(float) ** 2).sum() ** 0.5),
    }
    print(json.dumps(info, indent=2))
    return info


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="basinkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--config", help="experiment YAML (default: bundled desk config)")
        p.add_argument("--out", help="output directory (default: config output.dir)")
        p.add_argument("--seed", type=int, help="replace every seed in the config")
        p.add_argument("--profile", choices=PROFILES, default="desk")
        if manifest:
            p.add_argument("--manifest", help="pool manifest (default: <out>/pool/manifest.csv)")

    common(sub.add_parser("train-pool", help="train RI and TL pools"))
    common(sub.add_parser("de-curve", help="bootstrap deep-ensemble curves"), manifest=True)
    common(sub.add_parser("interpolate", help="barrier curves for the four scenarios"), manifest=True)
    common(sub.add_parser("full", help="train-pool, de-curve, interpolate, summary"))
    p = sub.add_parser("inspect", help="print a checkpoint header")
    p.add_argument("checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            cmd_inspect(args.checkpoint)
            return EXIT_OK
        cfg, out = _config(args)
        if args.command == "train-pool":
            cmd_train_pool(cfg, out)
        elif args.command == "de-curve":
            cmd_de_curve(cfg, _manifest(args, out), out)
        elif args.command == "interpolate":
            cmd_interpolate(cfg, _manifest(args, out), out)
        else:
            print(cmd_full(cfg, out), end="")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ScenarioError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (CheckpointError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
