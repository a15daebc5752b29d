"""scikit-learn style facade over the two training stages.

``AutoRegressiveEmbedder`` fits on triplet records and transforms token-id
sequences into dense vectors, so the whole pipeline drops into sklearn
tooling (``get_params``/``set_params``, ``clone``, pipelines).
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .align import CdaConfig, train_cda
from .compress import train_ic
from .data import TripletRecord
from .metrics import POOLING_MODES, embed, sts_eval
from .model import LmConfig, LmModel


def _check_records(X, require_negatives: int = 0) -> list[TripletRecord]:
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a non-empty list of TripletRecord")
    for i, rec in enumerate(X):
        if not isinstance(rec, TripletRecord):
            raise TypeError(f"X[{i}] is {type(rec).__name__}, expected TripletRecord")
        if not rec.anchor or not rec.positive:
            raise ValueError(f"X[{i}] has an empty anchor or positive")
        if len(rec.negatives) < require_negatives:
            raise ValueError(f"X[{i}] has {len(rec.negatives)} negatives, need {require_negatives}")
    return list(X)


class AutoRegressiveEmbedder(BaseEstimator, TransformerMixin):
    """Two-stage generative embedder with a fit/transform surface.

    ``fit`` trains the compression stage (reconstruction through k
    compressed tokens against a frozen decoder) and then the alignment
    stage on the records' explicit negatives. ``transform`` maps token-id
    sequences to pooled embedding vectors under the self instruction.
    """

    def __init__(self, dim: int = 64, n_layers: int = 2, n_heads: int = 2,
                 max_seq: int = 64, n_compress: int = 5, vocab_size: int | None = None,
                 ic_epochs: int = 2, ic_batch_size: int = 32, ic_lr: float = 3e-3,
                 cda_epochs: int = 4, cda_batch_size: int = 32, cda_lr: float = 3e-4,
                 tau: float = 0.1, beta: float = 0.1, variant: str = "sigmoid",
                 negatives: int = 1, pooling: str = "mean_compressed",
                 run_ic: bool = True, run_cda: bool = True, seed: int = 0):
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_seq = max_seq
        self.n_compress = n_compress
        self.vocab_size = vocab_size
        self.ic_epochs = ic_epochs
        self.ic_batch_size = ic_batch_size
        self.ic_lr = ic_lr
        self.cda_epochs = cda_epochs
        self.cda_batch_size = cda_batch_size
        self.cda_lr = cda_lr
        self.tau = tau
        self.beta = beta
        self.variant = variant
        self.negatives = negatives
        self.pooling = pooling
        self.run_ic = run_ic
        self.run_cda = run_cda
        self.seed = seed

    def _infer_vocab(self, records: list[TripletRecord]) -> int:
        top = 0
        for rec in records:
            for seq in [rec.anchor, rec.positive, rec.instr_next, rec.instr_self, *rec.negatives]:
                if seq:
                    top = max(top, max(seq))
        return top + 1

    def fit(self, X, y=None):
        """Train both stages on a list of TripletRecord; y is ignored."""
        records = _check_records(X, require_negatives=self.negatives if self.run_cda else 0)
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        vocab = self.vocab_size if self.vocab_size is not None else self._infer_vocab(records)
        config = LmConfig(vocab_size=vocab, dim=self.dim, n_layers=self.n_layers,
                          n_heads=self.n_heads, max_seq=self.max_seq, seed=self.seed,
                          n_compress=self.n_compress)
        encoder = LmModel.init(config)
        decoder = encoder.freeze()
        self.ic_curve_ = []
        self.cda_curve_ = []
        if self.run_ic:
            self.ic_curve_ = train_ic(encoder, decoder, records, epochs=self.ic_epochs,
                                      batch_size=self.ic_batch_size, lr=self.ic_lr,
                                      seed=self.seed)
        if self.run_cda:
            if not self.run_ic:
                warnings.warn("alignment on a randomly initialized encoder; "
                              "compression training is recommended first")
            cda_cfg = CdaConfig(tau=self.tau, beta=self.beta, variant=self.variant,
                                negatives_per_anchor=self.negatives)
            self.cda_curve_ = train_cda(encoder, decoder, records, cda_cfg,
                                        lr=self.cda_lr, epochs=self.cda_epochs,
                                        batch_size=self.cda_batch_size, seed=self.seed)
        self.encoder_ = encoder
        self.decoder_ = decoder
        self.instr_self_ = list(records[0].instr_self)
        self.embedding_dim_ = self.dim
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "encoder_"):
            raise NotFittedError("this AutoRegressiveEmbedder instance is not fitted yet")

    def transform(self, X) -> np.ndarray:
        """Embed token-id sequences: returns an (n, dim) float array."""
        self._require_fitted()
        if not isinstance(X, (list, tuple)) or not X:
            raise ValueError("X must be a non-empty list of token-id sequences")
        rows = []
        for seq in X:
            seq = list(seq)
            if not seq:
                raise ValueError("cannot embed an empty sequence")
            rows.append(embed(self.encoder_, seq, self.instr_self_, self.pooling).vector)
        return np.asarray(rows)

    def score(self, X, y=None) -> float:
        """Spearman correlation on gold-scored eval records."""
        self._require_fitted()
        records = _check_records(X)
        return sts_eval(self.encoder_, records, self.pooling).spearman
