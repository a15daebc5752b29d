"""Inference-time embedding extraction and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .compress import compress
from .data import TripletRecord
from .errors import NumericError, ShapeError
from .model import LmModel, input_embeddings, run_transformer
from .tensor import Tensor, no_grad

POOLING_MODES = ("mean_compressed", "last_compressed", "last_token", "mean_tokens")


@dataclass
class PooledEmbedding:
    vector: np.ndarray
    pooling: str


@dataclass
class MetricConfig:
    alpha: float = 2.0
    t_unif: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0 or self.t_unif <= 0:
            raise ValueError(f"alpha and t_unif must be > 0, got {self.alpha}, {self.t_unif}")


@dataclass
class MetricsReport:
    spearman: float
    alignment: float
    uniformity: float
    n_pairs: int
    pooling: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def pooled_embedding(encoder: LmModel, q, t, pooling: str = "mean_compressed") -> Tensor:
    """Differentiable single-vector embedding of (q, t) under a pooling mode.

    ``mean_compressed`` (default) and ``last_compressed`` pool the k
    compressed-token states; ``last_token`` / ``mean_tokens`` skip the
    compressed tokens entirely and pool the plain hidden states, which is
    the usual last-token / average baselines' behaviour.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"unknown pooling {pooling!r}, expected one of {POOLING_MODES}")
    if pooling in ("mean_compressed", "last_compressed"):
        matrix = compress(encoder, q, t).matrix
        return matrix.mean(axis=0) if pooling == "mean_compressed" else matrix[-1]
    hidden = run_transformer(encoder, input_embeddings(encoder, None, list(q) + list(t)))
    return hidden[-1] if pooling == "last_token" else hidden.mean(axis=0)


def embed(encoder: LmModel, q, t, pooling: str = "mean_compressed") -> PooledEmbedding:
    """Deterministic inference-time embedding; builds no autodiff graph."""
    with no_grad():
        vec = pooled_embedding(encoder, q, t, pooling).data.copy()
    return PooledEmbedding(vector=vec, pooling=pooling)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks: ties share the average of their positions (1-based)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(pred, gold) -> float:
    """Pearson correlation of average-tied ranks."""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1 or len(pred) < 2:
        raise ValueError(f"spearman needs two equal-length 1-d inputs, got {pred.shape}, {gold.shape}")
    rp, rg = _average_ranks(pred), _average_ranks(gold)
    dp, dg = rp - rp.mean(), rg - rg.mean()
    denom = np.sqrt((dp * dp).sum() * (dg * dg).sum())
    if denom == 0.0:
        raise NumericError("spearman undefined: an input is constant")
    return float((dp * dg).sum() / denom)


def alignment_metric(a: np.ndarray, b: np.ndarray, alpha: float = 2.0) -> float:
    """Mean alpha-powered Euclidean distance over positive pairs; lower is better."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"alignment_metric: paired shapes differ {a.shape} vs {b.shape}")
    dists = np.linalg.norm(a - b, axis=-1)
    return float((dists ** alpha).mean())


def uniformity_metric(x: np.ndarray, t_unif: float = 2.0) -> float:
    """log mean exp(-t * squared distance) over all unordered distinct pairs."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("uniformity_metric needs at least 2 embeddings")
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    iu = np.triu_indices(x.shape[0], k=1)
    vals = -t_unif * sq[iu]
    m = vals.max()
    return float(m + np.log(np.exp(vals - m).mean()))


def sts_eval(encoder: LmModel, pairs: list[TripletRecord], pooling: str = "mean_compressed",
             config: MetricConfig | None = None) -> MetricsReport:
    """Graded-pair evaluation: Spearman of cosine scores against gold, plus
    alignment over the gold-top-quartile pairs and uniformity over all
    embeddings (both on unit-normalized vectors)."""
    config = config or MetricConfig()
    if len(pairs) < 2:
        raise ValueError("sts_eval needs at least 2 pairs")
    gold = []
    left, right = [], []
    for rec in pairs:
        if rec.gold is None:
            raise ValueError("sts_eval requires records with gold scores")
        gold.append(rec.gold)
        left.append(embed(encoder, rec.anchor, rec.instr_self, pooling).vector)
        right.append(embed(encoder, rec.positive, rec.instr_self, pooling).vector)
    gold = np.asarray(gold, dtype=np.float64)
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    pred = np.array([cosine(a, b) for a, b in zip(left, right)])

    norms_l = np.linalg.norm(left, axis=1, keepdims=True)
    norms_r = np.linalg.norm(right, axis=1, keepdims=True)
    if np.any(norms_l == 0) or np.any(norms_r == 0):
        raise NumericError("zero-norm embedding in evaluation set")
    ln, rn = left / norms_l, right / norms_r
    top = gold >= np.quantile(gold, 0.75)
    return MetricsReport(
        spearman=spearman(pred, gold),
        alignment=alignment_metric(ln[top], rn[top], config.alpha),
        uniformity=uniformity_metric(np.concatenate([ln, rn], axis=0), config.t_unif),
        n_pairs=len(pairs),
        pooling=pooling,
    )
