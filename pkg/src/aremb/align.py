"""Stage 2: contrastive alignment of embedding-conditioned distributions.

Similarity between texts is read off the frozen decoder's sequence
log-probabilities rather than cosine distance. S1 rewards the query
embedding and the positive's self embedding for assigning the positive the
same log-probability; S2 is a preference-style log-ratio score that raises
the positive's probability under the query embedding and lowers the
negatives', each normalized by a frozen reference snapshot to cancel length
effects. The outer loss plugs S1 and S2 into a softmax-contrast form with no
in-batch negatives. Variants swap the sigmoid for a log-sigmoid or replace
log-probability gaps with per-step KL/JS divergences; an InfoNCE baseline on
pooled embeddings supports learning-efficiency comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .compress import compress
from .data import TripletRecord
from .errors import ConfigurationError, NumericError
from .model import LmModel, forward, sequence_log_prob
from .optim import Adam
from .tensor import (
    Tensor,
    absolute,
    kl_elements,
    log_sigmoid,
    logsumexp,
    no_grad,
    sigmoid,
    softmax,
    stack,
    tslice,
)

VARIANTS = ("sigmoid", "log_sigmoid", "kl", "js", "infonce")


@dataclass
class CdaConfig:
    tau: float = 0.1
    beta: float = 0.1
    variant: str = "sigmoid"
    negatives_per_anchor: int = 1

    def __post_init__(self):
        if self.tau <= 0 or self.beta <= 0:
            raise ConfigurationError(f"tau and beta must be > 0, got {self.tau}, {self.beta}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.negatives_per_anchor < 1:
            raise ValueError("negatives_per_anchor must be >= 1")


@dataclass
class ScoredTriplet:
    """Log-probabilities feeding S1/S2 for one record.

    Trainable-encoder terms are tensors; reference terms are plain floats
    computed from the frozen snapshot taken when alignment training started.
    """

    logp_pos_from_q: Tensor
    logp_pos_from_pos: Tensor
    logp_neg_from_q: list[Tensor] = field(default_factory=list)
    ref_logp_pos_from_q: float | None = None
    ref_logp_neg_from_q: list[float] = field(default_factory=list)


@dataclass
class ReferenceModel:
    """Frozen encoder snapshot + frozen decoder; never updated."""

    encoder: LmModel
    decoder: LmModel

    def __post_init__(self):
        if not (self.encoder.frozen and self.decoder.frozen):
            raise ConfigurationError("reference encoder and decoder must both be frozen")


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(float(x))


def s1(scored: ScoredTriplet, beta: float) -> Tensor:
    """-sigmoid(beta * |log-prob gap|); in (-1, -0.5], peaking when the gap is 0."""
    gap = absolute(_as_t(scored.logp_pos_from_q) - _as_t(scored.logp_pos_from_pos))
    return -sigmoid(gap * beta)


def s2(scored: ScoredTriplet, i: int, beta: float) -> Tensor:
    """-sigmoid(beta * (positive advantage - negative advantage)) against the reference."""
    if scored.ref_logp_pos_from_q is None or i >= len(scored.ref_logp_neg_from_q):
        raise ConfigurationError("s2 requires reference log-probabilities")
    adv_pos = _as_t(scored.logp_pos_from_q) - scored.ref_logp_pos_from_q
    adv_neg = _as_t(scored.logp_neg_from_q[i]) - scored.ref_logp_neg_from_q[i]
    return -sigmoid((adv_pos - adv_neg) * beta)


def _s1_log_sigmoid(scored: ScoredTriplet, beta: float) -> Tensor:
    gap = absolute(_as_t(scored.logp_pos_from_q) - _as_t(scored.logp_pos_from_pos))
    return -log_sigmoid(gap * beta)


def _s2_log_sigmoid(scored: ScoredTriplet, i: int, beta: float) -> Tensor:
    if scored.ref_logp_pos_from_q is None or i >= len(scored.ref_logp_neg_from_q):
        raise ConfigurationError("s2 requires reference log-probabilities")
    adv_pos = _as_t(scored.logp_pos_from_q) - scored.ref_logp_pos_from_q
    adv_neg = _as_t(scored.logp_neg_from_q[i]) - scored.ref_logp_neg_from_q[i]
    return -log_sigmoid((adv_pos - adv_neg) * beta)


def contrast(s1_val: Tensor, s2_vals: Sequence[Tensor], tau: float) -> Tensor:
    """-log( e^{S1/tau} / (e^{S1/tau} + sum_i e^{S2_i/tau}) ), log-sum-exp stabilized."""
    if not s2_vals:
        raise ValueError("contrast requires at least one negative score")
    inv = 1.0 / tau
    z = stack([s1_val * inv] + [s * inv for s in s2_vals])
    return logsumexp(z) - s1_val * inv


def _batched(scored: Sequence[ScoredTriplet], config: CdaConfig,
             s1_fn: Callable, s2_fn: Callable) -> Tensor:
    if not scored:
        raise ValueError("empty scored batch")
    losses = []
    for st in scored:
        if not st.logp_neg_from_q:
            raise ValueError("record has no negatives; alignment needs at least one")
        s1_val = s1_fn(st, config.beta)
        s2_vals = [s2_fn(st, i, config.beta) for i in range(len(st.logp_neg_from_q))]
        losses.append(contrast(s1_val, s2_vals, config.tau))
    return stack(losses).mean()


def cda_loss(scored: Sequence[ScoredTriplet], config: CdaConfig) -> Tensor:
    """Primary (sigmoid) alignment loss; strictly positive."""
    return _batched(scored, config, s1, s2)


def cda_loss_logsigmoid(scored: Sequence[ScoredTriplet], config: CdaConfig) -> Tensor:
    """Log-sigmoid variant, taken verbatim: S terms are -log sigma(.), so both
    equal ln 2 at zero argument and S1 still grows as the pair gets closer."""
    return _batched(scored, config, _s1_log_sigmoid, _s2_log_sigmoid)


# ---- divergence variants ---------------------------------------------------


@dataclass
class DistributionPairs:
    """Per-record teacher-forced next-token distributions for KL/JS scoring.

    Each pair is (self-embedding distributions, query-embedding
    distributions), row-aligned over the same number of steps.
    """

    pos: tuple[Tensor, Tensor]
    negs: list[tuple[Tensor, Tensor]] = field(default_factory=list)


def _check_rows(t: Tensor) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
    sums = t.data.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= 1e-6):
        raise NumericError(f"distribution rows must sum to 1 +- 1e-6, got sums {sums}")
    return t


def kl_divergence(p, q) -> Tensor:
    """Mean over steps of KL(p_t || q_t), rows over the vocabulary."""
    p, q = _check_rows(p), _check_rows(q)
    return kl_elements(p, q).sum(axis=-1).mean()


def js_divergence(p, q) -> Tensor:
    """Symmetric Jensen-Shannon divergence, in [0, ln 2], mean over steps."""
    p, q = _check_rows(p), _check_rows(q)
    m = (p + q) * 0.5
    half = kl_elements(p, m).sum(axis=-1) + kl_elements(q, m).sum(axis=-1)
    return (half * 0.5).mean()


def _divergence_loss(batch: Sequence[DistributionPairs], config: CdaConfig,
                     divergence: Callable) -> Tensor:
    if not batch:
        raise ValueError("empty distribution batch")
    losses = []
    for pairs in batch:
        if not pairs.negs:
            raise ValueError("record has no negatives; alignment needs at least one")
        s1_val = -sigmoid(divergence(*pairs.pos))
        s2_vals = [-sigmoid(divergence(p, q)) for p, q in pairs.negs]
        losses.append(contrast(s1_val, s2_vals, config.tau))
    return stack(losses).mean()


def cda_loss_kl(batch: Sequence[DistributionPairs], config: CdaConfig) -> Tensor:
    return _divergence_loss(batch, config, kl_divergence)


def cda_loss_js(batch: Sequence[DistributionPairs], config: CdaConfig) -> Tensor:
    return _divergence_loss(batch, config, js_divergence)


# ---- InfoNCE baseline ------------------------------------------------------


def _unit(v: Tensor) -> Tensor:
    norm_sq = float((v.data * v.data).sum())
    if norm_sq == 0.0:
        raise NumericError("cannot normalize a zero-norm embedding")
    return v * ((v * v).sum() ** -0.5)


def infonce_loss(anchors: Sequence[Tensor], positives: Sequence[Tensor],
                 negatives: Sequence[Sequence[Tensor]], tau: float,
                 in_batch: bool = False) -> Tensor:
    """Cosine InfoNCE over unit-normalized embeddings.

    ``negatives[i]`` are anchor i's explicit negatives; with ``in_batch``
    the other anchors' positives are appended as extra negatives.
    """
    if not (len(anchors) == len(positives) == len(negatives)):
        raise ValueError("anchors, positives and negatives must align")
    a_n = [_unit(a) for a in anchors]
    p_n = [_unit(p) for p in positives]
    losses = []
    for i, a in enumerate(a_n):
        sims = [(a * p_n[i]).sum()]
        for neg in negatives[i]:
            sims.append((a * _unit(neg)).sum())
        if in_batch:
            sims.extend((a * p_n[j]).sum() for j in range(len(p_n)) if j != i)
        if len(sims) < 2:
            raise ValueError("InfoNCE needs at least one negative per anchor")
        inv = 1.0 / tau
        z = stack([s * inv for s in sims])
        losses.append(logsumexp(z) - sims[0] * inv)
    return stack(losses).mean()


# ---- scoring and training ---------------------------------------------------


def _score_trainable(encoder: LmModel, decoder: LmModel, record: TripletRecord,
                     max_negatives: int | None = None) -> ScoredTriplet:
    """Trainable-encoder log-probabilities only; reference fields left unset."""
    if not decoder.frozen:
        raise ConfigurationError("scoring requires a frozen decoder")
    negs = record.negatives if max_negatives is None else record.negatives[:max_negatives]
    if not record.positive or not negs:
        raise ValueError("record needs a positive and at least one negative")
    e_q = compress(encoder, record.anchor, record.instr_next).matrix
    e_pos = compress(encoder, record.positive, record.instr_self).matrix
    return ScoredTriplet(
        logp_pos_from_q=sequence_log_prob(decoder, e_q, record.positive),
        logp_pos_from_pos=sequence_log_prob(decoder, e_pos, record.positive),
        logp_neg_from_q=[sequence_log_prob(decoder, e_q, n) for n in negs],
    )


def score_triplet(encoder: LmModel, decoder: LmModel, reference: ReferenceModel,
                  record: TripletRecord, max_negatives: int | None = None) -> ScoredTriplet:
    """Assemble all S1/S2 operands for one record.

    Gradients flow through the trainable encoder's embeddings only; the
    decoder stays frozen on both the trainable and the reference path.
    """
    if reference is None:
        raise ConfigurationError("score_triplet requires a reference snapshot")
    scored = _score_trainable(encoder, decoder, record, max_negatives)
    ref_pos, ref_negs = reference_log_probs(reference, record, max_negatives)
    scored.ref_logp_pos_from_q = ref_pos
    scored.ref_logp_neg_from_q = ref_negs
    return scored


def reference_log_probs(reference: ReferenceModel, record: TripletRecord,
                        max_negatives: int | None = None) -> tuple[float, list[float]]:
    """Frozen-snapshot log-probabilities (no graph is built)."""
    negs = record.negatives if max_negatives is None else record.negatives[:max_negatives]
    with no_grad():
        e_q = compress(reference.encoder, record.anchor, record.instr_next).matrix
        ref_pos = sequence_log_prob(reference.decoder, e_q, record.positive).item()
        ref_negs = [sequence_log_prob(reference.decoder, e_q, n).item() for n in negs]
    return ref_pos, ref_negs


def step_distributions(decoder: LmModel, prefix: Tensor, teacher: list[int]) -> Tensor:
    """(T, vocab) next-token distributions teacher-forced on ``teacher``."""
    k = prefix.data.shape[0]
    logits = forward(decoder, prefix, teacher[:-1])
    return softmax(tslice(logits, (slice(k - 1, k - 1 + len(teacher)), slice(None))))


def distribution_pairs(encoder: LmModel, decoder: LmModel, record: TripletRecord,
                       max_negatives: int | None = None) -> DistributionPairs:
    """Teacher-forced distribution pairs for the KL/JS variants.

    The positive pair compares the positive's self-embedding against the
    query embedding, both forced on the positive. Negative pairs force the
    negative's self-embedding on the negative; differing lengths are aligned
    over the first min(T+, T-) steps.
    """
    negs = record.negatives if max_negatives is None else record.negatives[:max_negatives]
    e_q = compress(encoder, record.anchor, record.instr_next).matrix
    e_pos = compress(encoder, record.positive, record.instr_self).matrix
    q_on_pos = step_distributions(decoder, e_q, record.positive)
    pos_pair = (step_distributions(decoder, e_pos, record.positive), q_on_pos)
    neg_pairs = []
    for n in negs:
        e_neg = compress(encoder, n, record.instr_self).matrix
        n_dists = step_distributions(decoder, e_neg, n)
        steps = min(n_dists.data.shape[0], q_on_pos.data.shape[0])
        neg_pairs.append((
            tslice(n_dists, (slice(0, steps), slice(None))),
            tslice(q_on_pos, (slice(0, steps), slice(None))),
        ))
    return DistributionPairs(pos=pos_pair, negs=neg_pairs)


def train_cda(encoder: LmModel, decoder: LmModel, records: list[TripletRecord],
              config: CdaConfig | None = None, *, lr: float = 3e-4, epochs: int = 4,
              batch_size: int = 32, seed: int = 0,
              on_epoch: Callable[[int, LmModel], None] | None = None) -> list[tuple[int, float]]:
    """Adam over the selected variant; reference snapshot taken at entry.

    Mutates the encoder in place and returns the per-step loss curve. The
    decoder and the snapshot are untouched; runs are deterministic under a
    fixed seed. Reference log-probabilities are constants of the run, so they
    are computed once per record and cached.
    """
    if not records:
        raise ValueError("train_cda: empty dataset")
    config = config or CdaConfig()
    n_neg = config.negatives_per_anchor
    for rec in records:
        if len(rec.negatives) < n_neg:
            raise ValueError(f"record has {len(rec.negatives)} negatives, config wants {n_neg}")
    reference = ReferenceModel(encoder.freeze(), decoder)
    ref_cache: dict[int, tuple[float, list[float]]] = {}
    opt = Adam(encoder.trainable(), lr=lr)
    rng = np.random.default_rng(seed)
    curve: list[tuple[int, float]] = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(records))
        for start in range(0, len(records), batch_size):
            batch_idx = order[start:start + batch_size]
            opt.zero_grad()
            if config.variant in ("sigmoid", "log_sigmoid"):
                scored = []
                for i in batch_idx:
                    st = _score_trainable(encoder, decoder, records[i], n_neg)
                    if i not in ref_cache:
                        ref_cache[i] = reference_log_probs(reference, records[i], n_neg)
                    st.ref_logp_pos_from_q, st.ref_logp_neg_from_q = ref_cache[i]
                    scored.append(st)
                loss_fn = cda_loss if config.variant == "sigmoid" else cda_loss_logsigmoid
                loss = loss_fn(scored, config)
            elif config.variant in ("kl", "js"):
                batch = [distribution_pairs(encoder, decoder, records[i], n_neg)
                         for i in batch_idx]
                loss_fn = cda_loss_kl if config.variant == "kl" else cda_loss_js
                loss = loss_fn(batch, config)
            else:  # infonce
                anchors, positives, negatives = [], [], []
                for i in batch_idx:
                    rec = records[i]
                    anchors.append(compress(encoder, rec.anchor, rec.instr_next).matrix.mean(axis=0))
                    positives.append(compress(encoder, rec.positive, rec.instr_self).matrix.mean(axis=0))
                    negatives.append([
                        compress(encoder, n, rec.instr_self).matrix.mean(axis=0)
                        for n in rec.negatives[:n_neg]
                    ])
                loss = infonce_loss(anchors, positives, negatives, config.tau)
            loss.backward()
            opt.step()
            curve.append((step, loss.item()))
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, encoder)
    return curve
