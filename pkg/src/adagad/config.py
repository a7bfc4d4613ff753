"""Pipeline configuration: one flat dataclass, a key = value file format, hashing.

Architecture fields left unset resolve from per-dataset presets. The
resolved config serializes to sorted ``key = value`` text; parsing that
text gives back the same config, and its sha256 stamps every artifact.
"""
from __future__ import annotations

import difflib
import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentationConfig
from .detect import DetectionConfig
from .pretrain import ArchitectureConfig, TrainConfig

VARIANTS = ("full", "rand", "node", "edge", "subgraph")
VARIANT_LEVELS = {
    "full": ("node", "edge", "subgraph"),
    "rand": ("node", "edge", "subgraph"),
    "node": ("node",),
    "edge": ("edge",),
    "subgraph": ("subgraph",),
}

# small attributed graphs: narrow embeddings, two encoder layers
_SMALL = {"embedding_dim": 12, "encoder_depth": 2, "decoder_depth": 1}
_LARGE = {"embedding_dim": 64, "encoder_depth": 1, "decoder_depth": 1}
_SMALL_DATASETS = {"disney", "books", "enron"}
_GAT_DATASETS = {"enron", "weibo"}

# fields that never change results and are left out of the hash
_UNHASHED = {"output", "workers"}
_STAGE1_FIELDS = {
    "dataset_name", "variant", "precision",
    "p_r", "p_z", "q", "node_mask_count", "edge_mask_count", "walks", "walk_length",
    "l_n", "l_e", "l_s", "n_aug", "max_trials", "theta_relax", "max_relaxations", "shared_theta",
    "embedding_dim", "encoder_depth", "decoder_depth", "encoder_kind",
    "pretrain_epochs", "lr", "weight_decay", "dropout", "pretrain_target",
}  # fmt: skip


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = ""
    dataset_name: str = ""
    output: str = "runs/default"
    variant: str = "full"
    seeds: tuple[int, ...] = tuple(range(10))
    anomaly_rate: float | None = None
    precision: str = "float64"
    # augmentation
    p_r: float = 1.0
    p_z: float = 0.1
    q: float = 1.0
    node_mask_count: int = 2
    edge_mask_count: int = 10
    walks: int = 2
    walk_length: int = 2
    l_n: int = 10
    l_e: int = 10
    l_s: int = 10
    n_aug: int = 30
    max_trials: int = 200
    theta_relax: float = 1.02
    max_relaxations: int = 10
    shared_theta: bool = False
    workers: int = 1
    # architecture; None resolves from the dataset preset
    embedding_dim: int | None = None
    encoder_depth: int | None = None
    decoder_depth: int | None = None
    encoder_kind: str | None = None
    # training
    pretrain_epochs: int = 20
    retrain_epochs: int = 20
    lr: float = 0.005
    weight_decay: float = 0.01
    dropout: float = 0.1
    pretrain_target: str = "masked"
    # stage 2
    gamma: float = 0.5
    gamma_reg: float = 0.01
    regularizer: bool = True  # false builds stage 2 without the regularizer at all
    tau: float = 0.5
    score_floor: float = 1e-8
    aggregation: str = "attention"
    attention_mode: str = "vector"
    fixed_weights: tuple[float, ...] = field(default_factory=tuple)
    swap_rec_weights: bool = False

    # ------------------------------------------------------------------ views

    @property
    def levels(self) -> tuple[str, ...]:
        return VARIANT_LEVELS[self.variant]

    def augmentation(self, seed: int) -> AugmentationConfig:
        keys = {f.name for f in fields(AugmentationConfig)} - {"seed"}
        return AugmentationConfig(seed=seed, **{k: getattr(self, k) for k in keys})

    def architecture(self) -> ArchitectureConfig:
        r = self.resolved()
        return ArchitectureConfig(r.embedding_dim, r.encoder_depth, r.decoder_depth, r.encoder_kind, r.dropout)

    def pretraining(self) -> TrainConfig:
        return TrainConfig(self.pretrain_epochs, self.lr, self.weight_decay, self.pretrain_target)

    def detection(self) -> DetectionConfig:
        return DetectionConfig(
            gamma=self.gamma,
            gamma_reg=self.gamma_reg,
            tau=self.tau,
            score_floor=self.score_floor,
            aggregation=self.aggregation,
            attention_mode=self.attention_mode,
            fixed_weights=self.fixed_weights or None,
            swap_rec_weights=self.swap_rec_weights,
            epochs=self.retrain_epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            dropout=self.dropout,
        )

    # ------------------------------------------------------------- resolution

    def resolved(self) -> "PipelineConfig":
        """Fill dataset name and architecture presets."""
        name = self.dataset_name
        if not name and self.dataset:
            name = Path(self.dataset).name.lower()
        key = name.lower()
        preset = dict(_SMALL if key in _SMALL_DATASETS else _LARGE)
        preset["encoder_kind"] = "gat" if key in _GAT_DATASETS else "gcn"
        updates = {k: v for k, v in preset.items() if getattr(self, k) is None}
        return replace(self, dataset_name=name, **updates)

    def validate(self) -> "PipelineConfig":
        errors = _range_errors(self)
        if errors:
            raise ConfigError(errors)
        r = self.resolved()
        try:
            r.augmentation(0)
            r.architecture()
            r.pretraining()
            r.detection()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return r

    # ---------------------------------------------------------- serialization

    def serialize(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(_items(self)))

    def hash(self) -> str:
        text = "".join(f"{k} = {_format(v)}\n" for k, v in sorted(_items(self)) if k not in _UNHASHED)
        return hashlib.sha256(text.encode()).hexdigest()

    def stage1_hash(self, seed: int, graph_digest: str) -> str:
        """Hash of everything that determines a pretrained checkpoint.

        The training graph enters through its content digest, so moving a
        dataset directory does not invalidate checkpoints.
        """
        text = "".join(f"{k} = {_format(v)}\n" for k, v in sorted(_items(self)) if k in _STAGE1_FIELDS)
        return hashlib.sha256(f"{text}seed = {seed}\ngraph = {graph_digest}\n".encode()).hexdigest()

    def snapshot(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(_items(self))}


def _items(cfg):
    return [(f.name, getattr(cfg, f.name)) for f in fields(cfg)]


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ----------------------------------------------------------------------------
# parsing

_FIELD_TYPES = {
    "seeds": "int_tuple",
    "fixed_weights": "float_tuple",
    "anomaly_rate": "opt_float",
    "embedding_dim": "opt_int",
    "encoder_depth": "opt_int",
    "decoder_depth": "opt_int",
    "encoder_kind": "opt_str",
}


def _kind(name: str) -> str:
    if name in _FIELD_TYPES:
        return _FIELD_TYPES[name]
    default = PipelineConfig.__dataclass_fields__[name].default
    return type(default).__name__


def parse_seeds(text: str) -> tuple[int, ...]:
    """'0..9' (inclusive), '3' or '0,2,5' (ranges may be mixed in)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _convert(name: str, raw: str):
    kind = _kind(name)
    raw = raw.strip()
    if kind.startswith("opt_"):
        if raw.lower() in ("none", ""):
            return None
        kind = kind[4:]
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "int_tuple":
        return parse_seeds(raw)
    if kind == "float_tuple":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def _range_errors(cfg: PipelineConfig) -> list[str]:
    errors = []

    def check(ok, msg):
        if not ok:
            errors.append(msg)

    check(cfg.variant in VARIANTS, f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    check(len(cfg.seeds) > 0, "seeds must not be empty")
    check(len(set(cfg.seeds)) == len(cfg.seeds), "seeds must be distinct")
    check(cfg.precision in ("float32", "float64"), "precision must be float32 or float64")
    check(0.0 < cfg.tau < 1.0, f"tau must lie in (0, 1), got {cfg.tau}")
    check(0.0 <= cfg.gamma <= 1.0, f"gamma must lie in [0, 1], got {cfg.gamma}")
    check(cfg.gamma_reg >= 0.0, f"gamma_reg must be >= 0, got {cfg.gamma_reg}")
    check(cfg.score_floor > 0.0, "score_floor must be > 0")
    check(cfg.lr > 0.0, "lr must be > 0")
    check(cfg.weight_decay >= 0.0, "weight_decay must be >= 0")
    check(0.0 <= cfg.dropout < 1.0, f"dropout must lie in [0, 1), got {cfg.dropout}")
    check(cfg.pretrain_epochs >= 0 and cfg.retrain_epochs >= 0, "epochs must be >= 0")
    if cfg.anomaly_rate is not None:
        check(0.0 < cfg.anomaly_rate < 1.0, f"anomaly_rate must lie in (0, 1), got {cfg.anomaly_rate}")
    for name in ("p_r", "p_z", "q"):
        v = getattr(cfg, name)
        check(0.0 <= v <= 1.0, f"{name} must lie in [0, 1], got {v}")
    for name in ("node_mask_count", "edge_mask_count", "l_n", "l_e", "l_s", "n_aug", "max_trials", "workers"):
        check(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    check(cfg.theta_relax >= 1.0, "theta_relax must be >= 1")
    for name in ("embedding_dim",):
        v = getattr(cfg, name)
        check(v is None or v >= 1, f"{name} must be >= 1")
    for name in ("encoder_depth", "decoder_depth"):
        v = getattr(cfg, name)
        check(v is None or v >= 0, f"{name} must be >= 0")
    check(cfg.encoder_kind in (None, "gcn", "gat"), "encoder_kind must be gcn or gat")
    check(cfg.aggregation in ("fixed_linear", "learnable_linear", "attention"), "unknown aggregation strategy")
    check(cfg.attention_mode in ("vector", "scalar"), "attention_mode must be vector or scalar")
    check(cfg.pretrain_target in ("masked", "original"), "pretrain_target must be masked or original")
    return errors


def parse_pairs(text: str, source: str = "<config>") -> tuple[dict[str, str], list[str]]:
    """Raw ``key = value`` pairs; blank lines and '#' comments are skipped."""
    pairs: dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs and pairs[key] != value:
            errors.append(f"{source}:{lineno}: conflicting values for '{key}' ({pairs[key]!r} vs {value!r})")
            continue
        pairs[key] = value
    return pairs, errors


def build_config(pairs: dict[str, str], base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply raw string pairs on top of ``base``; all problems are reported together."""
    names = [f.name for f in fields(PipelineConfig)]
    updates, errors = {}, []
    for key, raw in pairs.items():
        if key not in names:
            close = difflib.get_close_matches(key, names, n=1)
            hint = f"; did you mean '{close[0]}'?" if close else ""
            errors.append(f"unknown key '{key}'{hint}")
            continue
        try:
            updates[key] = _convert(key, raw)
        except ValueError as exc:
            errors.append(f"bad value for '{key}': {exc}")
    if errors:
        raise ConfigError(errors)
    cfg = replace(base or PipelineConfig(), **updates)
    return cfg.validate()


def validate_config(text: str, overrides: dict[str, str] | None = None, source: str = "<config>") -> PipelineConfig:
    """Parse a key = value file body, apply flag overrides (flags win), resolve presets."""
    pairs, errors = parse_pairs(text, source)
    if errors:
        raise ConfigError(errors)
    pairs.update(overrides or {})
    return build_config(pairs)


def load_config(path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    text = Path(path).read_text() if path else ""
    return validate_config(text, overrides, str(path or "<defaults>"))
