"""Stage 1: reconstruction training through k compressed tokens.

The encoder reads (text, instruction, compressed tokens) — compressed tokens
last, so causal attention lets them see everything — and its final hidden
states at those k positions become the embedding matrix. A frozen decoder
must reconstruct the target from that matrix alone; the decoder never sees
the raw text or instruction, which is what makes the bottleneck informative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TripletRecord
from .errors import CapacityError, ConfigurationError
from .model import LmModel, input_embeddings, run_transformer, sequence_log_prob
from .optim import Adam
from .tensor import Tensor, concat, matmul, stack, tslice

IcItem = tuple[list[int], list[int], list[int]]  # (text q, instruction t, target d)


@dataclass
class CompressedEmbedding:
    """The k x dim matrix extracted at the compressed-token positions."""

    matrix: Tensor
    source: tuple[tuple[int, ...], tuple[int, ...]]  # (q ids, instruction ids)

    @property
    def k(self) -> int:
        return self.matrix.data.shape[0]


def compress(encoder: LmModel, q, t, projection: Tensor | None = None) -> CompressedEmbedding:
    """Embed (q, t) into the k compressed-token hidden states.

    Deterministic given (q, t, parameters). ``projection``, when given, maps
    the extracted states through an extra matrix; default is identity.
    """
    if encoder.config.n_compress < 1:
        raise ConfigurationError("encoder has no compressed-token table (n_compress = 0)")
    q, t = list(q), list(t)
    k = encoder.config.n_compress
    total = len(q) + len(t) + k
    if total > encoder.config.max_seq:
        raise CapacityError(f"len(q)+len(t)+k = {total} exceeds max_seq {encoder.config.max_seq}")
    tokens_part = input_embeddings(encoder, None, q + t)
    x = concat([tokens_part, encoder.params["compress_tokens"]], axis=0)
    hidden = run_transformer(encoder, x)
    matrix = tslice(hidden, (slice(len(q) + len(t), total), slice(None)))
    if projection is not None:
        matrix = matmul(matrix, projection)
    return CompressedEmbedding(matrix=matrix, source=(tuple(q), tuple(t)))


def ic_loss(encoder: LmModel, decoder: LmModel, batch: list[IcItem]) -> Tensor:
    """Mean per-token reconstruction NLL of targets from their embeddings.

    The decoder must be frozen: gradients reach only the encoder (including
    its compressed-token table). Per-token normalization keeps the scalar
    comparable across target lengths; the optimum is unchanged.
    """
    if not decoder.frozen:
        raise ConfigurationError("ic_loss requires a frozen decoder")
    if not batch:
        raise ValueError("ic_loss: empty batch")
    terms = []
    for q, t, d in batch:
        emb = compress(encoder, q, t)
        terms.append(-sequence_log_prob(decoder, emb.matrix, d) * (1.0 / len(d)))
    return stack(terms).mean()


def ic_items(records: list[TripletRecord]) -> list[IcItem]:
    """Expand records into reconstruction items.

    Each record yields one next-document view (embed the anchor under the
    next instruction, reconstruct the positive) and a self view for every
    document it carries (embed it under the self instruction, reconstruct
    it). The self views are what later make self-conditioned embeddings
    meaningful, for every rendering style the record contains.
    """
    items: list[IcItem] = []
    for rec in records:
        items.append((rec.anchor, rec.instr_next, rec.positive))
        items.append((rec.positive, rec.instr_self, rec.positive))
        items.append((rec.anchor, rec.instr_self, rec.anchor))
        for neg in rec.negatives:
            items.append((neg, rec.instr_self, neg))
    return items


def train_ic(encoder: LmModel, decoder: LmModel, records: list[TripletRecord], *,
             epochs: int = 2, batch_size: int = 32, lr: float = 3e-3,
             beta2: float = 0.95, seed: int = 0) -> list[tuple[int, float]]:
    """Adam over ic_loss; mutates the encoder in place and returns the loss curve.

    The decoder is untouched; runs are deterministic under a fixed seed.
    beta2 defaults below the textbook 0.999: these runs are a few hundred
    steps, and the shorter second-moment memory adapts much faster there.
    """
    if not records:
        raise ValueError("train_ic: empty dataset")
    if epochs < 1:
        raise ValueError("train_ic: epochs must be >= 1")
    items = ic_items(records)
    opt = Adam(encoder.trainable(), lr=lr, beta2=beta2)
    rng = np.random.default_rng(seed)
    curve: list[tuple[int, float]] = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(items))
        for start in range(0, len(items), batch_size):
            batch = [items[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            loss = ic_loss(encoder, decoder, batch)
            loss.backward()
            opt.step()
            curve.append((step, loss.item()))
            step += 1
    return curve
