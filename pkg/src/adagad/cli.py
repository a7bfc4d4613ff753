"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 failure while running.

Stage commands (augment, pretrain, detect) share one configuration: pass the
same ``--config`` file and ``--set`` overrides to each. Checkpoints carry a
hash of the stage-1 settings and of the training graph's content, and
``detect`` refuses checkpoints written under different settings.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .augment import AugmentationError, AugmentedGraph, AugmentedGraphSet, build_collections
from .config import ConfigError, PipelineConfig, load_config, parse_seeds
from .detect import FreezeViolation
from .evaluate import (
    aggregation_ablation,
    auc,
    contamination_study,
    depth_regularizer_sweep,
    results_csv,
    rows_csv,
    run_variant,
)
from .graph import GraphFormatError, load_graph, write_graph
from .injection import InjectionConfig, InjectionError, inject
from .pipeline import dump_json, run_pipeline, versions
from .pretrain import build_branch, report_dict
from .runner import StageError, detect_stage, pretrain_stage, scores_csv
from .spectral import DegenerateSignalError, graph_anomaly_magnitude

log = logging.getLogger("adagad")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------------------
# helpers


def _config(args, **forced) -> PipelineConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in (
        ("seeds", "seeds"),
        ("variant", "variant"),
        ("gamma", "gamma"),
        ("gamma_reg", "gamma_reg"),
        ("tau", "tau"),
        ("out", "output"),
        ("dataset", "dataset"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    overrides.update({k: str(v) for k, v in forced.items()})
    return load_config(getattr(args, "config", None), overrides)


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(obj))


def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


# ----------------------------------------------------------------------------
# subcommands


def cmd_metrics(args):
    g = load_graph(args.dataset_dir)
    out = {"n": g.n, "m": g.m, "d": g.d, "anomalies": None if g.labels is None else int(g.labels.sum())}
    try:
        out.update(graph_anomaly_magnitude(g).as_dict())
    except DegenerateSignalError as exc:
        out["error"] = str(exc)
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_inject(args):
    g = load_graph(args.dataset_dir).unlabeled()
    cfg = InjectionConfig(args.contextual, args.structural, args.pool_k, args.clique_size, args.seed)
    out = inject(g, cfg)
    write_graph(out, args.out_dir)
    _write_json(
        Path(args.out_dir) / "injection.json",
        {"source": str(args.dataset_dir), "config": vars(cfg), "anomalies": int(out.labels.sum())},
    )
    print(f"wrote {args.out_dir}: {int(out.labels.sum())} anomalies, m={out.m}")
    return EXIT_OK


def cmd_augment(args):
    g = load_graph(args.dataset_dir)
    cfg = _config(args, dataset=args.dataset_dir)
    levels = cfg.levels if args.level == "all" else (args.level,)
    if not set(levels) <= set(cfg.levels):
        raise ConfigError(f"level '{args.level}' is not used by variant '{cfg.variant}'")
    try:
        sets = build_collections(g.unlabeled(), cfg.augmentation(args.seed), levels, gated=cfg.variant != "rand")
    except AugmentationError as exc:
        raise CLIError(str(exc), EXIT_RUNTIME) from exc
    out = Path(args.out)
    manifest = {
        "dataset": str(args.dataset_dir),
        "graph_digest": g.digest(),
        "seed": args.seed,
        "config_hash": cfg.hash(),
        "stage1_hash": cfg.stage1_hash(args.seed, g.digest()),
        "levels": {},
    }
    for level, s in sets.items():
        members = []
        for k, a in enumerate(s.graphs):
            rel = f"{level}/{k:03d}"
            write_graph(a.graph.unlabeled(), out / rel)
            members.append({"dir": rel, **a.provenance()})
        manifest["levels"][level] = {
            "theta": s.threshold_theta if s.gated else None,
            "gated": s.gated,
            "trials": s.trials,
            "relaxations": s.relaxations,
            "members": members,
        }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {sum(len(s.graphs) for s in sets.values())} augmented graphs to {out}")
    return EXIT_OK


def _load_collections(aug_dir: Path) -> tuple[dict, dict[str, AugmentedGraphSet]]:
    manifest = json.loads((aug_dir / "manifest.json").read_text())
    sets = {}
    for level, info in manifest["levels"].items():
        graphs = [
            AugmentedGraph(
                load_graph(aug_dir / m["dir"]),
                level,
                np.asarray(m["masked_nodes"], dtype=np.int64),
                np.asarray(m["masked_edges"], dtype=np.int64).reshape(-1, 2),
                m["g_ano"],
            )
            for m in info["members"]
        ]
        theta = info["theta"] if info["gated"] else float("inf")
        sets[level] = AugmentedGraphSet(level, theta, graphs, info["trials"], info["relaxations"])
    return manifest, sets


def cmd_pretrain(args):
    aug_dir = Path(args.augment_dir)
    manifest, sets = _load_collections(aug_dir)
    g = load_graph(manifest["dataset"])
    cfg = _config(args, dataset=manifest["dataset"])
    seed = manifest["seed"]
    expected = cfg.stage1_hash(seed, g.digest())
    if manifest["stage1_hash"] != expected:
        raise CLIError("augmentations were produced under a different configuration or dataset; rerun augment")
    try:
        branches, reports = pretrain_stage(g, sets, cfg, seed)
    except nn.NonFiniteError as exc:
        raise CLIError(str(exc), EXIT_RUNTIME) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for level, branch in branches.items():
        meta = {"level": level, "seed": seed, "arch": vars(cfg.architecture())}
        nn.save_checkpoint(out / f"{level}.npz", branch.state_dict(), expected, meta)
    _write_json(
        out / "report.json",
        {"stage1_hash": expected, "seed": seed, "levels": sorted(branches), "reports": report_dict(reports)},
    )
    print(f"wrote {len(branches)} checkpoints to {out}")
    return EXIT_OK


def cmd_detect(args):
    g = load_graph(args.dataset_dir)
    cfg = _config(args, dataset=args.dataset_dir)
    seed = args.seed
    ckpt = Path(args.ckpt_dir)
    expected = cfg.stage1_hash(seed, g.digest())
    branches = {}
    with nn.precision(cfg.precision):
        for level in cfg.levels:
            path = ckpt / f"{level}.npz"
            if not path.is_file():
                raise CLIError(f"missing checkpoint {path}")
            try:
                state, _ = nn.load_checkpoint(path, expected)
            except nn.CheckpointMismatch as exc:
                raise CLIError(f"stale checkpoint: {exc}") from exc
            branch = build_branch(level, g.d, cfg.architecture(), seed)
            branch.load_state_dict(state)
            branches[level] = branch
    try:
        model, report, scores = detect_stage(g, branches, cfg, seed)
    except (nn.NonFiniteError, FreezeViolation) as exc:
        raise CLIError(str(exc), EXIT_RUNTIME) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scores.csv").write_text(scores_csv(scores))
    run = {
        "config_hash": cfg.hash(),
        "stage1_hash": expected,
        "seed": seed,
        "versions": versions(),
        "retrain_losses": report.losses,
        "encoder_digest": report.encoder_digest,
    }
    if g.labels is not None and 0 < g.labels.sum() < g.n:
        run["auc"] = auc(scores.scores, g.labels)
    _write_json(out / "manifest.json", run)
    print(f"wrote {out / 'scores.csv'}" + (f" (AUC {run['auc']:.4f})" if "auc" in run else ""))
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    if not cfg.dataset:
        raise ConfigError("no dataset: pass --dataset or set 'dataset' in the config file")
    res = run_pipeline(cfg)
    m = res.metrics()
    if m["mean_auc"] is not None:
        print(f"mean AUC {m['mean_auc']:.4f} ± {m['std_auc']:.4f} over {len(m['aucs'])} seeds -> {res.output}")
    else:
        print(f"scores written to {res.output}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _config(args)
    if not cfg.dataset:
        raise ConfigError("no dataset: pass --dataset or set 'dataset' in the config file")
    g = load_graph(cfg.dataset)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.study == "variants":
        results = {v: run_variant(g, cfg, v) for v in args.variants.split(",")}
        (out / "variants.csv").write_text(results_csv(results, "variant"))
    elif args.study == "aggregation":
        results = aggregation_ablation(g, cfg)
        (out / "aggregation.csv").write_text(results_csv(results, "aggregation"))
    elif args.study == "contamination":
        results = contamination_study(g.unlabeled(), cfg, args.n_anom, clique_size=args.clique_size)
        (out / "contamination.csv").write_text(results_csv(results, "regime"))
    else:
        depths = parse_seeds(args.depths)
        weights = tuple(float(w) for w in args.weights.split(","))
        rows = depth_regularizer_sweep(g, cfg, depths, weights)
        (out / "sweep.csv").write_text(rows_csv(rows))
        _write_json(out / "metrics.json", {"study": "sweep", "rows": rows, "config_hash": cfg.hash()})
        print(rows_csv(rows), end="")
        return EXIT_OK
    _write_json(
        out / "metrics.json",
        {"study": args.study, "config_hash": cfg.hash(), "results": {k: v.to_dict() for k, v in results.items()}},
    )
    for k, v in results.items():
        print(f"{k}: mean AUC {v.mean:.4f} ± {v.std:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adagad", description="Anomaly-denoised graph autoencoder anomaly detection.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("metrics", help="graph anomaly magnitudes of a dataset")
    s.add_argument("dataset_dir")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("inject", help="inject contextual and structural anomalies")
    s.add_argument("dataset_dir")
    s.add_argument("out_dir")
    s.add_argument("--contextual", type=int, required=True)
    s.add_argument("--structural", type=int, required=True)
    s.add_argument("--clique-size", type=int, default=15)
    s.add_argument("--pool-k", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("augment", help="write anomaly-denoised augmented graphs")
    s.add_argument("dataset_dir")
    s.add_argument("--level", choices=("node", "edge", "subgraph", "all"), default="all")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("pretrain", help="pretrain one autoencoder per augmented level")
    s.add_argument("augment_dir")
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("detect", help="retrain decoders on frozen encoders and score nodes")
    s.add_argument("dataset_dir")
    s.add_argument("ckpt_dir")
    s.add_argument("--gamma", type=float)
    s.add_argument("--gamma-reg", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--variant")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("run", help="full pipeline over all seeds with artifacts")
    s.add_argument("--dataset")
    s.add_argument("--seeds")
    s.add_argument("--variant")
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    _add_config_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", help="multi-seed studies: variants, sweep, aggregation, contamination")
    s.add_argument("--study", choices=("variants", "sweep", "aggregation", "contamination"), default="variants")
    s.add_argument("--dataset")
    s.add_argument("--seeds")
    s.add_argument("--variants", default="full,rand")
    s.add_argument("--depths", default="1..4")
    s.add_argument("--weights", default="0,0.001,0.01")
    s.add_argument("--n-anom", type=int, default=138)
    s.add_argument("--clique-size", type=int, default=15)
    s.add_argument("--out")
    _add_config_flags(s)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AugmentationError, nn.NonFiniteError, FreezeViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (GraphFormatError, InjectionError, FileNotFoundError, nn.CheckpointMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
