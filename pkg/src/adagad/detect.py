"""Stage 2: frozen multi-level encoders, retrained unified decoders, node scores."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .graph import Graph
from .pretrain import AttributeDecoder, AutoencoderBranch, StructureDecoder
from .seeding import derive

log = logging.getLogger(__name__)

STRATEGIES = ("fixed_linear", "learnable_linear", "attention")


@dataclass(frozen=True)
class DetectionConfig:
    gamma: float = 0.5
    gamma_reg: float = 0.01
    tau: float = 0.5
    score_floor: float = 1e-8
    aggregation: str = "attention"
    attention_mode: str = "vector"
    fixed_weights: tuple[float, ...] | None = None
    swap_rec_weights: bool = False
    epochs: int = 20
    lr: float = 0.005
    weight_decay: float = 0.01
    dropout: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.gamma_reg < 0:
            raise ValueError("gamma_reg must be >= 0")
        if self.aggregation not in STRATEGIES:
            raise ValueError(f"aggregation must be one of {STRATEGIES}")
        if self.attention_mode not in ("vector", "scalar"):
            raise ValueError("attention_mode must be 'vector' or 'scalar'")

    @property
    def structure_weight(self) -> float:
        """Weight on ‖A − Â‖ terms; (1 − γ) unless the swapped reading is requested."""
        return self.gamma if self.swap_rec_weights else 1.0 - self.gamma

    @property
    def attribute_weight(self) -> float:
        return 1.0 - self.gamma if self.swap_rec_weights else self.gamma


class AggregationModule(nn.Module):
    """Combine per-level embeddings e_1..e_k into one n×h matrix."""

    def __init__(self, strategy, dim, n_levels, rng, fixed_weights=None, attention_mode="vector"):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown aggregation strategy {strategy!r}")
        self.strategy = strategy
        self.n_levels = n_levels
        self.fixed = None
        self.logits = []
        self.fc = None
        if strategy == "fixed_linear":
            w = np.full(n_levels, 1.0 / n_levels) if fixed_weights is None else np.asarray(fixed_weights, float)
            if len(w) != n_levels or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
                raise ValueError(f"fixed weights must be {n_levels} non-negative values summing to 1")
            self.fixed = w
        elif strategy == "learnable_linear":
            self.logits = [nn.parameter(np.zeros((1, 1)), f"logit{i}") for i in range(n_levels)]
        else:
            self.fc = nn.Linear(dim, dim if attention_mode == "vector" else 1, rng)

    def weights(self, embs):
        """Per-level weights as tensors broadcastable against the embeddings."""
        if self.strategy == "fixed_linear":
            return [nn.Tensor(np.array([[w]])) for w in self.fixed]
        if self.strategy == "learnable_linear":
            scores = self.logits
        else:
            scores = [self.fc(e) for e in embs]
        # subtract the elementwise max across levels, held constant (softmax-invariant)
        top = np.maximum.reduce([s.data for s in scores])
        ex = [nn.exp(nn.sub(s, nn.Tensor(top))) for s in scores]
        denom = ex[0]
        for t in ex[1:]:
            denom = nn.add(denom, t)
        return [nn.div(t, denom) for t in ex]

    def __call__(self, embs):
        embs = [nn.as_tensor(e) for e in embs]
        if len(embs) != self.n_levels:
            raise ValueError(f"expected {self.n_levels} embeddings, got {len(embs)}")
        if any(e.shape != embs[0].shape for e in embs):
            raise ValueError("embeddings must share one shape")
        if self.n_levels == 1:
            return embs[0]
        out = None
        for w, e in zip(self.weights(embs), embs):
            term = nn.mul(w, e)
            out = term if out is None else nn.add(out, term)
        return out


@dataclass(frozen=True, eq=False)
class AnomalyScores:
    scores: np.ndarray
    ranking: np.ndarray
    rate: float | None = None
    flagged: np.ndarray | None = None

    @classmethod
    def from_scores(cls, scores, rate: float | None = None) -> "AnomalyScores":
        scores = np.asarray(scores, dtype=np.float64).ravel()
        ranking = np.lexsort((np.arange(len(scores)), -scores))
        flagged = None
        if rate is not None:
            flagged = np.zeros(len(scores), dtype=bool)
            flagged[flag_anomalies(scores, rate)] = True
        return cls(scores, ranking, rate, flagged)

    def ranks(self) -> np.ndarray:
        r = np.empty(len(self.scores), dtype=np.int64)
        r[self.ranking] = np.arange(1, len(self.scores) + 1)
        return r


def flag_anomalies(scores, anomaly_rate: float) -> np.ndarray:
    """Top round(rate·n) node ids by score, ties broken by ascending id."""
    if not 0.0 < anomaly_rate < 1.0:
        raise ValueError(f"anomaly rate must lie in (0, 1), got {anomaly_rate}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    count = int(math.floor(anomaly_rate * len(scores) + 0.5))
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:count])


# ----------------------------------------------------------------------------
# losses on explicit reconstructions (usable with or without gradients)


def reconstruction_terms(a, a_hat, x, x_hat):
    """(L_rs, L_ra) = (‖A − Â‖², ‖X − X̂‖²)."""
    return nn.frobenius_sq(a, a_hat), nn.frobenius_sq(x, x_hat)


def score_tensor(a, a_hat, x, x_hat, structure_weight, attribute_weight):
    """s_i = w_s‖a_i − â_i‖ + w_a‖x_i − x̂_i‖ as an (n, 1) tensor."""
    s_err = nn.row_norm(nn.sub(a, a_hat))
    a_err = nn.row_norm(nn.sub(x, x_hat))
    return nn.add(nn.mul(s_err, structure_weight), nn.mul(a_err, attribute_weight))


def anomaly_distribution(scores, closed_nbhd, tau: float, floor: float = 1e-8):
    """A_i = s_i^{-τ} / Σ_{j ∈ N_i} s_j^{-τ}; ``scores`` is an (n, 1) tensor, N_i closed."""
    p = nn.power(nn.clamp_min(nn.as_tensor(scores), floor), -tau)
    return nn.div(p, nn.spmm(closed_nbhd, p))


def regularization_terms(scores, closed_nbhd, tau: float, floor: float = 1e-8):
    """(A, S, L_reg) with S_i = −A_i log A_i and L_reg = −Σ S_i."""
    dist = anomaly_distribution(scores, closed_nbhd, tau, floor)
    s = nn.mul(nn.mul(dist, nn.log(dist)), -1.0)
    return dist, s, nn.mul(nn.reduce_sum(s), -1.0)


def node_anomaly_distribution(scores, g: Graph, tau: float, score_floor: float = 1e-8) -> np.ndarray:
    ctx = nn.GraphContext(g.n, g.edges)
    s = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    return anomaly_distribution(nn.Tensor(s), ctx.closed_neighborhood_matrix(), tau, score_floor).data.ravel()


def regularization_loss(scores, g: Graph, tau: float, score_floor: float = 1e-8) -> float:
    ctx = nn.GraphContext(g.n, g.edges)
    s = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    return float(regularization_terms(nn.Tensor(s), ctx.closed_neighborhood_matrix(), tau, score_floor)[2].data)


# ----------------------------------------------------------------------------
# model


@dataclass
class Reconstruction:
    a_hat: np.ndarray
    x_hat: np.ndarray
    l_rec: float
    l_rs: float
    l_ra: float


class DetectionModel(nn.Module):
    def __init__(self, branches: list[AutoencoderBranch], in_dim: int, cfg: DetectionConfig, seed: int):
        if not branches:
            raise ValueError("need at least one pretrained encoder")
        rng = derive(seed, "init", "detect")
        self.levels = [b.level for b in branches]
        self.encoders = [b.encoder.freeze() for b in branches]
        arch = branches[0].arch
        emb = self.encoders[0].out_dim
        if any(e.out_dim != emb for e in self.encoders):
            raise ValueError("all encoders must share the embedding dimension")
        self.cfg = cfg
        self.pre = [nn.Linear(emb, emb, rng) for _ in branches]
        self.aggregation = AggregationModule(
            cfg.aggregation, emb, len(branches), rng, cfg.fixed_weights, cfg.attention_mode
        )
        self.attr_decoder = AttributeDecoder(emb, in_dim, arch.decoder_depth, rng, cfg.dropout)
        self.struct_decoder = StructureDecoder(emb, arch.decoder_depth, rng, cfg.dropout)

    def encoder_state(self) -> dict[str, np.ndarray]:
        return {
            f"{lvl}.{k}": v for lvl, enc in zip(self.levels, self.encoders) for k, v in enc.state_dict().items()
        }

    def trainable_parameters(self):
        return [p for p in self.parameters() if not p.frozen]

    def embeddings(self, ctx, x) -> list[np.ndarray]:
        """Frozen-encoder embeddings; constants for the retraining graph."""
        inputs = nn.input_matrix(x)
        return [enc(ctx, inputs).data for enc in self.encoders]

    def forward(self, ctx, embs, training=False, rng=None):
        h = self.aggregation([p(nn.Tensor(e)) for p, e in zip(self.pre, embs)])
        h = nn.dropout(h, self.cfg.dropout, rng, training)
        return self.struct_decoder(ctx, h), self.attr_decoder(ctx, h)

    def objective(self, ctx, embs, g: Graph, training=False, rng=None, with_regularizer=True):
        """Returns (L, L_rec, L_rs, L_ra, L_reg or None, score tensor)."""
        a_hat, x_hat = self.forward(ctx, embs, training, rng)
        a = ctx.dense_adjacency()
        l_rs, l_ra = reconstruction_terms(a, a_hat, g.attributes, x_hat)
        ws, wa = self.cfg.structure_weight, self.cfg.attribute_weight
        l_rec = nn.add(nn.mul(l_rs, ws), nn.mul(l_ra, wa))
        s = score_tensor(a, a_hat, g.attributes, x_hat, ws, wa)
        l_reg = None
        total = l_rec
        if with_regularizer:
            _, _, l_reg = regularization_terms(s, ctx.closed_neighborhood_matrix(), self.cfg.tau, self.cfg.score_floor)
            total = nn.add(l_rec, nn.mul(l_reg, self.cfg.gamma_reg))
        return total, l_rec, l_rs, l_ra, l_reg, s

    def reconstruct(self, g: Graph) -> Reconstruction:
        ctx = nn.GraphContext(g.n, g.edges)
        embs = self.embeddings(ctx, g.attributes)
        a_hat, x_hat = self.forward(ctx, embs)
        l_rs, l_ra = reconstruction_terms(ctx.dense_adjacency(), a_hat, g.attributes, x_hat)
        ws, wa = self.cfg.structure_weight, self.cfg.attribute_weight
        l_rs, l_ra = float(l_rs.data), float(l_ra.data)
        return Reconstruction(a_hat.data, x_hat.data, ws * l_rs + wa * l_ra, l_rs, l_ra)

    def score(self, g: Graph, rate: float | None = None) -> AnomalyScores:
        rec = self.reconstruct(g)
        s = score_tensor(
            g.dense_adjacency(), rec.a_hat, g.attributes, rec.x_hat, self.cfg.structure_weight, self.cfg.attribute_weight
        )
        return AnomalyScores.from_scores(s.data.ravel(), rate)


def reconstruction_loss(model: DetectionModel, g: Graph) -> tuple[float, float, float]:
    """(L_rec, L_ra, L_rs) for the current model on ``g``."""
    rec = model.reconstruct(g)
    return rec.l_rec, rec.l_ra, rec.l_rs


def anomaly_scores(model: DetectionModel, g: Graph, rate: float | None = None) -> AnomalyScores:
    return model.score(g, rate)


class FreezeViolation(AssertionError):
    pass


@dataclass
class RetrainReport:
    losses: list[float] = field(default_factory=list)
    rec_losses: list[float] = field(default_factory=list)
    reg_losses: list[float] = field(default_factory=list)
    encoder_digest: str = ""


def retrain(model: DetectionModel, g: Graph, seed: int, with_regularizer: bool = True) -> RetrainReport:
    """Fit aggregation, pre-aggregation and both decoders on the unmasked graph.

    ``with_regularizer=False`` removes the regularizer from the computation
    entirely; with gamma_reg = 0 both settings give identical results.
    """
    g = g.unlabeled()
    cfg = model.cfg
    rng = derive(seed, "dropout", "retrain")
    ctx = nn.GraphContext(g.n, g.edges)
    embs = model.embeddings(ctx, g.attributes)
    before = nn.state_digest(model.encoder_state())
    opt = nn.Adam(model.trainable_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    report = RetrainReport(encoder_digest=before)
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        total, l_rec, _, _, l_reg, _ = model.objective(ctx, embs, g, True, rng, with_regularizer)
        if not np.isfinite(total.data):
            raise nn.NonFiniteError(f"non-finite retraining loss at epoch {epoch}")
        total.backward()
        opt.step()
        report.losses.append(float(total.data))
        report.rec_losses.append(float(l_rec.data))
        if l_reg is not None:
            report.reg_losses.append(float(l_reg.data))
        log.debug("retrain epoch %d loss %.6g", epoch, float(total.data))
    if nn.state_digest(model.encoder_state()) != before:
        raise FreezeViolation("encoder parameters changed during retraining")
    return report
