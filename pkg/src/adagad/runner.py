"""In-memory stage functions shared by the pipeline, the studies and the CLI."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .augment import AugmentedGraphSet, build_collections
from .config import PipelineConfig
from .detect import AnomalyScores, DetectionModel, RetrainReport, retrain
from .graph import Graph
from .pretrain import AutoencoderBranch, BranchReport, pretrain_all

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and seed."""

    def __init__(self, stage: str, seed: int, cause: BaseException):
        self.stage = stage
        self.seed = seed
        self.cause = cause
        super().__init__(f"stage '{stage}' failed for seed {seed}: {type(cause).__name__}: {cause}")


@dataclass
class SeedRun:
    seed: int
    scores: AnomalyScores
    collections: dict[str, AugmentedGraphSet]
    pretrain_reports: dict[str, BranchReport]
    retrain_report: RetrainReport
    timings: dict[str, float] = field(default_factory=dict)
    model: DetectionModel | None = None


def anomaly_rate(cfg: PipelineConfig, g: Graph) -> float:
    """Configured rate, else the labeled prevalence, else 5%."""
    if cfg.anomaly_rate is not None:
        return cfg.anomaly_rate
    if g.labels is not None and 0 < g.labels.sum() < g.n:
        return float(g.labels.mean())
    return 0.05


def augment_stage(g: Graph, cfg: PipelineConfig, seed: int) -> dict[str, AugmentedGraphSet]:
    return build_collections(g.unlabeled(), cfg.augmentation(seed), cfg.levels, gated=cfg.variant != "rand")


def pretrain_stage(g: Graph, sets, cfg: PipelineConfig, seed: int):
    with nn.precision(cfg.precision):
        return pretrain_all(g.unlabeled(), sets, cfg.architecture(), cfg.pretraining(), seed)


def detect_stage(
    g: Graph, branches: dict[str, AutoencoderBranch], cfg: PipelineConfig, seed: int, eval_graph: Graph | None = None
) -> tuple[DetectionModel, RetrainReport, AnomalyScores]:
    """Retrain the stage-2 model on ``g`` and score ``eval_graph`` (default ``g``)."""
    target = eval_graph if eval_graph is not None else g
    with nn.precision(cfg.precision):
        model = DetectionModel([branches[lv] for lv in cfg.levels], g.d, cfg.detection(), seed)
        report = retrain(model, g, seed, with_regularizer=cfg.regularizer)
        scores = model.score(target.unlabeled(), anomaly_rate(cfg, target))
    return model, report, scores


def run_seed(
    train_graph: Graph, cfg: PipelineConfig, seed: int, eval_graph: Graph | None = None, keep_model: bool = False
) -> SeedRun:
    """augment → pretrain → retrain → score for one seed.

    Scores are computed on ``eval_graph`` when given; it must share the node
    set of ``train_graph``.
    """
    target = eval_graph if eval_graph is not None else train_graph
    if target.n != train_graph.n or target.d != train_graph.d:
        raise ValueError("evaluation graph must have the training graph's nodes and attribute width")
    timings = {}
    stage = "augment"
    try:
        t0 = time.perf_counter()
        sets = augment_stage(train_graph, cfg, seed)
        timings["augment"] = time.perf_counter() - t0
        stage = "pretrain"
        t0 = time.perf_counter()
        branches, reports = pretrain_stage(train_graph, sets, cfg, seed)
        timings["pretrain"] = time.perf_counter() - t0
        stage = "detect"
        t0 = time.perf_counter()
        model, report, scores = detect_stage(train_graph, branches, cfg, seed, target)
        timings["detect"] = time.perf_counter() - t0
    except Exception as exc:  # re-raised with provenance
        raise StageError(stage, seed, exc) from exc
    log.debug("seed %d: times=%s", seed, {k: round(v, 2) for k, v in timings.items()})
    return SeedRun(seed, scores, sets, reports, report, timings, model if keep_model else None)


def scores_csv(scores: AnomalyScores) -> str:
    """node_id,score,rank,flagged; scores written as shortest round-trip floats."""
    ranks = scores.ranks()
    flagged = scores.flagged if scores.flagged is not None else np.zeros(len(scores.scores), dtype=bool)
    lines = ["node_id,score,rank,flagged"]
    lines += [f"{i},{float(s)!r},{int(r)},{int(f)}" for i, (s, r, f) in enumerate(zip(scores.scores, ranks, flagged))]
    return "\n".join(lines) + "\n"
